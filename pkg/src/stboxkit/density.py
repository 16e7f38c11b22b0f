"""Gaussian-kernel estimate of a class's joint (width, height) pdf on a grid."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from stboxkit.core import Dataset, box_sizes, class_ids

logger = logging.getLogger(__name__)

GRID_SIZE = 100
BANDWIDTH_FLOOR = 0.5  # px; keeps the kernel alive for duplicate samples
GRID_PAD = 3.0  # bandwidths of padding beyond the data range
AXIS_FLOOR = 0.5  # px; grid never reaches non-positive sizes
KL_EPS = 1e-12


class InsufficientSamplesError(ValueError):
    """A class has fewer than two box samples and cannot get a prior."""

    def __init__(self, class_id: int, n: int):
        super().__init__(f"insufficient samples for class {class_id} (got {n}, need >= 2)")
        self.class_id = class_id
        self.n = n


@dataclass(frozen=True, eq=False)
class ClassPrior:
    """Discretized joint size pdf of one class.

    ``mass[i, j]`` is the probability of the cell centered at
    ``(w_axis[i], h_axis[j])``. ``mean_*``/``std_*`` are the raw sample
    statistics the density was fitted from.
    """

    class_id: int
    w_axis: np.ndarray
    h_axis: np.ndarray
    mass: np.ndarray
    mean_w: float
    mean_h: float
    std_w: float
    std_h: float
    n_samples: int
    bandwidth_w: float = 0.0
    bandwidth_h: float = 0.0

    def __post_init__(self):
        for name in ("w_axis", "h_axis", "mass"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.mass.shape != (self.w_axis.size, self.h_axis.size):
            raise ValueError("mass shape does not match the axes")
        for axis in (self.w_axis, self.h_axis):
            if axis.ndim != 1 or axis.size == 0 or np.any(axis <= 0):
                raise ValueError("axes must be non-empty with positive values")
            if axis.size > 1:
                steps = np.diff(axis)
                if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
                    raise ValueError("axes must be strictly increasing and uniformly spaced")
        if np.any(self.mass < 0) or abs(self.mass.sum() - 1.0) > 1e-9:
            raise ValueError("mass must be non-negative and sum to 1")

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.mass.shape

    @property
    def cell_w(self) -> float:
        return float(self.w_axis[1] - self.w_axis[0]) if self.w_axis.size > 1 else 1.0

    @property
    def cell_h(self) -> float:
        return float(self.h_axis[1] - self.h_axis[0]) if self.h_axis.size > 1 else 1.0

    @property
    def density(self) -> np.ndarray:
        return self.mass / (self.cell_w * self.cell_h)

    @property
    def mean_area(self) -> float:
        """Expected box area under the prior."""
        return float(np.sum(self.mass * np.outer(self.w_axis, self.h_axis)))

    @classmethod
    def from_grid(cls, class_id, w_axis, h_axis, mass, n_samples: int = 0) -> "ClassPrior":
        """Wrap an explicit mass table; statistics are taken from the grid.

        Useful for point-mass and few-cell priors. ``n_samples`` 0 marks a
        prior that was not fitted from data.
        """
        w_axis = np.atleast_1d(np.asarray(w_axis, dtype=float))
        h_axis = np.atleast_1d(np.asarray(h_axis, dtype=float))
        mass = np.asarray(mass, dtype=float).reshape(w_axis.size, h_axis.size)
        mass = mass / mass.sum()
        mw = mass.sum(axis=1)
        mh = mass.sum(axis=0)
        mean_w = float(mw @ w_axis)
        mean_h = float(mh @ h_axis)
        std_w = math.sqrt(max(0.0, float(mw @ (w_axis - mean_w) ** 2)))
        std_h = math.sqrt(max(0.0, float(mh @ (h_axis - mean_h) ** 2)))
        return cls(class_id, w_axis, h_axis, mass, mean_w, mean_h, std_w, std_h, n_samples)

    @classmethod
    def point_mass(cls, class_id: int, w: float, h: float) -> "ClassPrior":
        return cls.from_grid(class_id, [w], [h], [[1.0]])

    def to_csv(self) -> str:
        """Rows of ``w,h,density``, one per grid cell."""
        ww, hh = np.meshgrid(self.w_axis, self.h_axis, indexing="ij")
        buf = io.StringIO()
        buf.write("w,h,density\n")
        for w, h, d in zip(ww.ravel(), hh.ravel(), self.density.ravel()):
            buf.write(f"{float(w)!r},{float(h)!r},{float(d)!r}\n")
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "class": self.class_id,
            "n_samples": self.n_samples,
            "mean_w": self.mean_w,
            "mean_h": self.mean_h,
            "std_w": self.std_w,
            "std_h": self.std_h,
            "bandwidth_w": self.bandwidth_w,
            "bandwidth_h": self.bandwidth_h,
            "w_range": [float(self.w_axis[0]), float(self.w_axis[-1])],
            "h_range": [float(self.h_axis[0]), float(self.h_axis[-1])],
        }


def scott_bandwidth(values: np.ndarray, n_dims: int = 2) -> float:
    n = values.size
    std = float(np.std(values, ddof=1))
    return max(BANDWIDTH_FLOOR, std * n ** (-1.0 / (n_dims + 4)))


def _axis(values: np.ndarray, bandwidth: float, grid_size: int) -> np.ndarray:
    lo = max(values.min() - GRID_PAD * bandwidth, AXIS_FLOOR)
    hi = values.max() + GRID_PAD * bandwidth
    return np.linspace(lo, hi, grid_size)


def _kernel(axis: np.ndarray, values: np.ndarray, bandwidth: float) -> np.ndarray:
    z = (axis[:, None] - values[None, :]) / bandwidth
    return np.exp(-0.5 * z * z) / (bandwidth * math.sqrt(2.0 * math.pi))


def fit_prior(class_id: int, samples, grid_size: int = GRID_SIZE) -> ClassPrior:
    """Fit a product-Gaussian KDE to ``(w, h)`` samples and grid it.

    Bandwidths follow Scott's rule per axis with a 0.5 px floor. The grid
    spans the data range padded by three bandwidths; the mass is
    renormalized after truncation.
    """
    data = np.asarray(samples, dtype=float).reshape(-1, 2)
    n = data.shape[0]
    if n < 2:
        raise InsufficientSamplesError(class_id, n)
    if not np.all(np.isfinite(data)) or np.any(data <= 0):
        raise ValueError("box sizes must be positive and finite")
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    ws, hs = data[:, 0], data[:, 1]
    bw_w = scott_bandwidth(ws)
    bw_h = scott_bandwidth(hs)
    w_axis = _axis(ws, bw_w, grid_size)
    h_axis = _axis(hs, bw_h, grid_size)

    density = _kernel(w_axis, ws, bw_w) @ _kernel(h_axis, hs, bw_h).T / n
    mass = density * (w_axis[1] - w_axis[0]) * (h_axis[1] - h_axis[0])
    mass /= mass.sum()
    return ClassPrior(
        class_id=class_id,
        w_axis=w_axis,
        h_axis=h_axis,
        mass=mass,
        mean_w=float(ws.mean()),
        mean_h=float(hs.mean()),
        std_w=float(np.std(ws, ddof=1)),
        std_h=float(np.std(hs, ddof=1)),
        n_samples=n,
        bandwidth_w=bw_w,
        bandwidth_h=bw_h,
    )


def fit_priors(images: Dataset, grid_size: int = GRID_SIZE) -> dict[int, ClassPrior]:
    """Fit one prior per class from the box annotations of ``images``.

    Classes with fewer than two boxes are skipped with a warning.
    """
    priors = {}
    for c in class_ids(images, boxes_only=True):
        try:
            priors[c] = fit_prior(c, box_sizes(images, c), grid_size)
        except InsufficientSamplesError as exc:
            logger.warning("skipping class %d: %s", c, exc)
    return priors


def grid_mean(prior: ClassPrior) -> tuple[float, float]:
    """Mass-weighted mean of the grid coordinates."""
    return (
        float(prior.mass.sum(axis=1) @ prior.w_axis),
        float(prior.mass.sum(axis=0) @ prior.h_axis),
    )


def _same_grid(p: ClassPrior, q: ClassPrior) -> bool:
    return np.array_equal(p.w_axis, q.w_axis) and np.array_equal(p.h_axis, q.h_axis)


def _resample(q: ClassPrior, p: ClassPrior) -> np.ndarray:
    """Masses of ``q`` on ``p``'s grid, via bilinear interpolation of density."""
    if q.w_axis.size < 2 or q.h_axis.size < 2:
        raise ValueError("cannot interpolate a prior with a single-cell axis")
    interp = RegularGridInterpolator(
        (q.w_axis, q.h_axis), q.density, method="linear", bounds_error=False, fill_value=0.0
    )
    ww, hh = np.meshgrid(p.w_axis, p.h_axis, indexing="ij")
    mass = interp(np.stack([ww.ravel(), hh.ravel()], axis=-1)).reshape(ww.shape)
    mass = np.clip(mass, 0.0, None)
    total = mass.sum()
    return mass / total if total > 0 else mass


def kl_divergence(p: ClassPrior, q: ClassPrior) -> float:
    """Discrete KL(p || q) over ``p``'s grid.

    ``q`` is re-evaluated on ``p``'s grid when the grids differ. Empty cells
    of ``q`` get mass 1e-12, which biases the result on disjoint supports.
    """
    qm = q.mass if _same_grid(p, q) else _resample(q, p)
    support = p.mass > 0
    pm, qm = p.mass[support], qm[support]
    return float(np.sum(pm * np.log(pm / np.where(qm > 0, qm, KL_EPS))))


def _fraction_rng(seed: int, fraction: float) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, int(round(fraction * 1_000_000))]))


def subset_images(images: Dataset, fraction: float, seed: int) -> list:
    """Seeded random subset of about ``fraction`` of the images, in input order."""
    n = len(images)
    k = min(n, max(1, int(math.floor(fraction * n + 0.5))))
    if k == n:
        return list(images)
    picked = np.sort(_fraction_rng(seed, fraction).choice(n, size=k, replace=False))
    return [images[i] for i in picked]


def kl_curve(
    images: Dataset,
    class_id: int,
    fractions: Sequence[float],
    seed: int = 0,
    grid_size: int = GRID_SIZE,
) -> list[tuple[float, float | None]]:
    """KL of the full-data prior from priors fitted on image subsets.

    Points whose subset holds fewer than two boxes of ``class_id`` are
    reported with ``kl=None``.
    """
    fractions = [float(f) for f in fractions]
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise ValueError("fractions must lie in (0, 1]")
    if any(b < a for a, b in zip(fractions, fractions[1:])):
        raise ValueError("fractions must be sorted ascending")
    reference = fit_prior(class_id, box_sizes(images, class_id), grid_size)
    curve = []
    for f in fractions:
        subset = subset_images(images, f, seed)
        sizes = box_sizes(subset, class_id)
        if len(sizes) < 2:
            logger.warning(
                "class %d, fraction %g: only %d box samples, point dropped", class_id, f, len(sizes)
            )
            curve.append((f, None))
            continue
        curve.append((f, kl_divergence(reference, fit_prior(class_id, sizes, grid_size))))
    return curve


def advise_budget(curve: Sequence[tuple[float, float | None]], threshold: float = 0.05) -> float:
    """Smallest annotated fraction whose KL is within ``threshold``; else 1.0."""
    if not curve:
        raise ValueError("empty KL curve")
    for fraction, kl in curve:
        if kl is not None and kl <= threshold:
            return float(fraction)
    return 1.0


def curve_to_csv(curve: Sequence[tuple[float, float | None]]) -> str:
    lines = ["fraction,kl"]
    for f, kl in curve:
        lines.append(f"{f!r}," + ("" if kl is None else repr(kl)))
    return "\n".join(lines) + "\n"


def curve_from_csv(text: str) -> list[tuple[float, float | None]]:
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if not rows or rows[0].replace(" ", "") != "fraction,kl":
        raise ValueError("KL curve CSV must start with header 'fraction,kl'")
    curve = []
    for lineno, row in enumerate(rows[1:], start=2):
        parts = row.split(",")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 2 fields")
        try:
            curve.append((float(parts[0]), float(parts[1]) if parts[1] else None))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return curve
