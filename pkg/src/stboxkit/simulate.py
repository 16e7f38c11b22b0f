"""Synthetic weak labels: well/weak splits, noisy point clicks, pseudo-box quality."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from stboxkit.core import Annotation, CenterBox, Dataset, ImageRecord, PointAnnotation, iou

logger = logging.getLogger(__name__)

# sqrt(area) range over which the default model is anchored
SQRT_AREA_RANGE = (18.0, 198.0)
QUALITY_IOU = 0.5


class DegeneratePartitionError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Click error distance model: mean ``slope * sqrt(A) + intercept`` px.

    Distances follow a normal law truncated at zero whose location is
    chosen so that the mean distance equals the model mean. ``sigma`` is the
    untruncated standard deviation; ``sigma=0`` gives exact distances.
    """

    slope: float
    intercept: float
    sigma: float = 3.0

    def __post_init__(self):
        for name in ("slope", "intercept", "sigma"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        lo, hi = SQRT_AREA_RANGE
        if min(self.mean_error(lo), self.mean_error(hi)) < 0:
            raise ValueError("mean error distance must be non-negative over the supported sizes")

    def mean_error(self, sqrt_area: float) -> float:
        return self.slope * sqrt_area + self.intercept

    def sample_distance(self, sqrt_area: float, rng: np.random.Generator) -> float:
        mu = max(0.0, self.mean_error(sqrt_area))
        if self.sigma == 0:
            return mu
        loc = _truncated_location(mu, self.sigma)
        # inverse CDF of N(loc, sigma) restricted to [0, inf), in log space
        z = special.ndtri_exp(math.log(rng.random()) + special.log_ndtr(loc / self.sigma))
        return max(0.0, loc - self.sigma * float(z))

    def describe(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "sigma": self.sigma}


def _truncated_mean(loc: float, sigma: float) -> float:
    # mean of N(loc, sigma) conditioned on >= 0; erfcx keeps the ratio stable
    z = loc / sigma
    return loc + sigma * math.sqrt(2.0 / math.pi) / special.erfcx(-z / math.sqrt(2.0))


@lru_cache(maxsize=4096)
def _truncated_location(mean: float, sigma: float) -> float:
    """Location whose zero-truncated normal has the requested mean."""
    if mean <= 0:
        raise ValueError("a zero-truncated normal with sigma > 0 has positive mean")
    hi = mean
    lo = mean - sigma
    while _truncated_mean(lo, sigma) > mean:
        lo -= 2.0 * (mean - lo)
        if lo < -1e6 * sigma:
            raise ValueError(f"mean error {mean} too small for sigma {sigma}")
    return optimize.brentq(lambda m: _truncated_mean(m, sigma) - mean, lo, hi, xtol=1e-12)


def default_noise_model() -> NoiseModel:
    """Line through 5 px error at sqrt(A)=18 and 17 px at sqrt(A)=198."""
    (x0, x1), (y0, y1) = SQRT_AREA_RANGE, (5.0, 17.0)
    slope = (y1 - y0) / (x1 - x0)
    return NoiseModel(slope=slope, intercept=y0 - slope * x0, sigma=3.0)


def implied_shift_fraction(model: NoiseModel, w: float, h: float) -> float:
    """Mean click offset relative to the box's average side length."""
    return model.mean_error(math.sqrt(w * h)) / ((w + h) / 2.0)


def generate_point(box: CenterBox, model: NoiseModel, rng: np.random.Generator) -> PointAnnotation:
    """Noisy click: random direction, distance drawn from ``model``."""
    r = model.sample_distance(math.sqrt(box.w * box.h), rng)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return PointAnnotation(box.cx + r * math.cos(theta), box.cy + r * math.sin(theta))


def _check_seed(seed: int) -> None:
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")


def partition_dataset(images: Dataset, well_fraction: float, seed: int):
    """Split images into disjoint well-labelled and weakly-labelled sets.

    Both halves keep the input order.
    """
    _check_seed(seed)
    n = len(images)
    if n < 2:
        raise DegeneratePartitionError("degenerate partition: need at least 2 images")
    if not 0.0 < well_fraction < 1.0:
        raise DegeneratePartitionError(f"degenerate partition: well fraction {well_fraction}")
    k = int(math.floor(well_fraction * n + 0.5))
    if k == 0 or k == n:
        raise DegeneratePartitionError(
            f"degenerate partition: {well_fraction} of {n} images leaves an empty split"
        )
    order = np.random.default_rng(seed).permutation(n)
    well_idx = set(order[:k].tolist())
    well = [img for i, img in enumerate(images) if i in well_idx]
    weak = [img for i, img in enumerate(images) if i not in well_idx]
    return well, weak


def _image_key(image_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(image_id.encode("utf-8"), digest_size=8).digest(), "big")


def annotation_rng(seed: int, image_id: str, index: int) -> np.random.Generator:
    """Independent stream for one annotation of one image."""
    return np.random.default_rng(np.random.SeedSequence([seed, _image_key(image_id), index]))


def weaken(images: Dataset, model: NoiseModel, seed: int) -> list[ImageRecord]:
    """Replace every box annotation with a noisy point click."""
    _check_seed(seed)
    out = []
    for img in images:
        anns = []
        for k, ann in enumerate(img.annotations):
            if ann.box is None:
                anns.append(ann)
                continue
            point = generate_point(ann.box, model, annotation_rng(seed, img.image_id, k))
            anns.append(Annotation(ann.class_id, point=point))
        record = img.replace_annotations(anns)
        outside = record.out_of_bounds()
        if outside:
            logger.warning("image %s: %d noisy points fall outside the frame",
                           img.image_id, len(outside))
        out.append(record)
    return out


def box_quality(produced: Dataset, reference: Dataset) -> float:
    """Fraction of aligned box pairs with IOU strictly above 0.5.

    Pairs are matched by image id and annotation index. A produced
    annotation that is still a point counts as a miss.
    """
    ref_by_id = {img.image_id: img for img in reference}
    if len(ref_by_id) != len(produced) or any(img.image_id not in ref_by_id for img in produced):
        raise ValueError("annotation alignment failure: image ids differ")
    hits = total = 0
    for img in produced:
        ref = ref_by_id[img.image_id]
        if len(ref.annotations) != len(img.annotations):
            raise ValueError(f"annotation alignment failure: image {img.image_id} counts differ")
        for k, (a, b) in enumerate(zip(img.annotations, ref.annotations)):
            if b.box is None:
                raise ValueError(
                    f"annotation alignment failure: reference {img.image_id}[{k}] is not a box"
                )
            total += 1
            if a.box is not None and iou(a.box, b.box) > QUALITY_IOU:
                hits += 1
    if total == 0:
        raise ValueError("no annotations to compare")
    return hits / total
