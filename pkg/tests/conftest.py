import numpy as np
import pytest

from stboxkit.core import Annotation, CenterBox, ImageRecord
from stboxkit.density import fit_prior


def synthetic_dataset(n_images, classes, per_image=3, seed=0, size=512):
    """Box-labelled images. ``classes`` maps id -> (mean_w, mean_h, std)."""
    rng = np.random.default_rng(seed)
    images = []
    for k in range(n_images):
        anns = []
        for c, (mw, mh, sd) in sorted(classes.items()):
            for _ in range(per_image):
                w = max(2.0, mw + sd * rng.standard_normal())
                h = max(2.0, mh + sd * rng.standard_normal())
                cx = rng.uniform(w, size - w)
                cy = rng.uniform(h, size - h)
                anns.append(Annotation(c, box=CenterBox(float(cx), float(cy), float(w), float(h))))
        images.append(ImageRecord(f"img{k:04d}", size, size, tuple(anns)))
    return images


def random_unimodal_prior(rng, class_id=0):
    """KDE prior from correlated Gaussian box sizes."""
    n = int(rng.integers(30, 300))
    mu = rng.uniform(15, 120, 2)
    sd = rng.uniform(1, 0.25 * mu)
    rho = rng.uniform(-0.7, 0.7)
    cov = np.array([[sd[0] ** 2, rho * sd[0] * sd[1]], [rho * sd[0] * sd[1], sd[1] ** 2]])
    samples = np.abs(rng.multivariate_normal(mu, cov, n)) + 1.0
    return fit_prior(class_id, samples)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")
    config.acceptance_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    report = outcome.get_result()
    number, text = marker.args
    ok = not report.failed
    _, so_far = item.config.acceptance_results.get(number, (text, True))
    item.config.acceptance_results[number] = (text, so_far and ok)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.acceptance_results
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        text, ok = results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {text}")
