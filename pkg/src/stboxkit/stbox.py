"""Stochastic boxes: the "mean" box and the expected-IOU maximizing box.

The expected IOU of a candidate size ``(w, h)`` is the prior-weighted
average of its IOU with every grid box, all boxes sharing one center. The
maximizer is found with a compass pattern search inside ``mu +/- 5 sigma``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Literal

import numba
import numpy as np

from stboxkit.density import ClassPrior

logger = logging.getLogger(__name__)

MIN_BOUND = 0.5  # px


@dataclass(frozen=True)
class StBox:
    kind: Literal["mean", "mean_iou"]
    w: float
    h: float
    objective_value: float

    def __post_init__(self):
        if self.kind not in ("mean", "mean_iou"):
            raise ValueError(f"unknown ST box kind {self.kind!r}")
        if not (self.w > 0 and self.h > 0):
            raise ValueError("ST box size must be positive")
        if not 0.0 < self.objective_value <= 1.0 + 1e-12:
            raise ValueError(f"objective value {self.objective_value} outside (0, 1]")

    def as_row(self, class_id: int) -> dict:
        return {"class": class_id, "kind": self.kind, "w": self.w, "h": self.h,
                "objective": self.objective_value}


@dataclass(frozen=True)
class SolverConfig:
    """Compass search settings.

    ``initial_step=None`` uses a tenth of the search interval on each axis.
    """

    initial_step: float | None = None
    step_tolerance: float = 1e-3
    max_iterations: int = 10_000
    bound_sigmas: float = 5.0

    def __post_init__(self):
        if self.step_tolerance <= 0:
            raise ValueError("step_tolerance must be positive")
        if self.initial_step is not None and self.initial_step <= self.step_tolerance:
            raise ValueError("initial_step must exceed step_tolerance")
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if self.bound_sigmas <= 0:
            raise ValueError("bound_sigmas must be positive")


@dataclass(frozen=True)
class SearchResult:
    x: tuple[float, float]
    value: float
    iterations: int
    evaluations: int
    final_step: tuple[float, float]
    converged: bool


def expected_iou(w: float, h: float, prior: ClassPrior) -> float:
    """Mean IOU between a ``w x h`` box and the prior's boxes, all concentric."""
    W = prior.w_axis[:, None]
    H = prior.h_axis[None, :]
    inter = np.minimum(w, W) * np.minimum(h, H)
    ious = inter / (w * h + W * H - inter)
    return min(1.0, float(np.sum(ious * prior.mass)))


def search_bounds(prior: ClassPrior, bound_sigmas: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis ``(lower, upper)`` of the search box around the sample mean."""
    lower, upper = [], []
    for axis, mu, sigma in (("w", prior.mean_w, prior.std_w), ("h", prior.mean_h, prior.std_h)):
        if sigma > 0:
            lo, hi = mu - bound_sigmas * sigma, mu + bound_sigmas * sigma
        else:
            logger.warning("class %s: zero spread in %s, bounds widened to +/-1 px",
                           prior.class_id, axis)
            lo, hi = mu - 1.0, mu + 1.0
        lo = max(lo, MIN_BOUND)
        hi = max(hi, lo + 1.0)
        lower.append(lo)
        upper.append(hi)
    return np.array(lower), np.array(upper)


# (axis, direction) in poll order: +w, -w, +h, -h
_POLL = ((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0))


def pattern_search(
    objective: Callable[[float, float], float],
    start,
    lower,
    upper,
    step,
    tolerance: float,
    max_iterations: int,
) -> SearchResult:
    """Maximize a 2-D function by compass search.

    Each iteration polls the four axis neighbors in fixed order and moves to
    the first strict improvement. A poll without improvement halves the step.
    Stops once every axis step is below ``tolerance``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(start, dtype=float), lower, upper)
    step = np.broadcast_to(np.asarray(step, dtype=float), (2,)).copy()
    fx = objective(x[0], x[1])
    evaluations = 1
    iterations = 0
    while iterations < max_iterations and np.any(step >= tolerance):
        iterations += 1
        for axis, direction in _POLL:
            cand = x.copy()
            cand[axis] = min(max(x[axis] + direction * step[axis], lower[axis]), upper[axis])
            if cand[axis] == x[axis]:
                continue
            fc = objective(cand[0], cand[1])
            evaluations += 1
            if fc > fx:
                x, fx = cand, fc
                break
        else:
            step /= 2.0
    return SearchResult(
        x=(float(x[0]), float(x[1])),
        value=float(fx),
        iterations=iterations,
        evaluations=evaluations,
        final_step=(float(step[0]), float(step[1])),
        converged=bool(np.all(step < tolerance)),
    )


def mean_box(prior: ClassPrior) -> StBox:
    """ST box sized by the sample means."""
    return StBox("mean", prior.mean_w, prior.mean_h, expected_iou(prior.mean_w, prior.mean_h, prior))


def solve_mean_iou(
    prior: ClassPrior, config: SolverConfig | None = None, start=None
) -> tuple[StBox, SearchResult]:
    """Run the pattern search; ``start`` defaults to the mean box."""
    config = config or SolverConfig()
    lower, upper = search_bounds(prior, config.bound_sigmas)
    if start is None:
        start = (prior.mean_w, prior.mean_h)
    if config.initial_step is None:
        step = (upper - lower) / 10.0
    else:
        step = np.full(2, config.initial_step)
    result = pattern_search(
        lambda w, h: expected_iou(w, h, prior),
        start, lower, upper, step, config.step_tolerance, config.max_iterations,
    )
    if not result.converged:
        logger.warning("class %s: pattern search hit max_iterations=%d",
                       prior.class_id, config.max_iterations)
    return StBox("mean_iou", result.x[0], result.x[1], result.value), result


def mean_iou_box(prior: ClassPrior, config: SolverConfig | None = None) -> StBox:
    """Size maximizing the expected IOU with the prior's boxes."""
    return solve_mean_iou(prior, config)[0]


@numba.njit(cache=True)
def _exhaustive(cand_w, cand_h, w_axis, h_axis, mass):
    areas = np.outer(w_axis, h_axis)
    overlap_h = np.empty(h_axis.size)
    out = np.empty(cand_w.size)
    for k in range(cand_w.size):
        x, y = cand_w[k], cand_h[k]
        # both boxes centered at the origin: overlap of [-a/2, a/2] and [-b/2, b/2]
        for j in range(h_axis.size):
            overlap_h[j] = min(0.5 * y, 0.5 * h_axis[j]) - max(-0.5 * y, -0.5 * h_axis[j])
        total = 0.0
        for i in range(w_axis.size):
            ow = min(0.5 * x, 0.5 * w_axis[i]) - max(-0.5 * x, -0.5 * w_axis[i])
            for j in range(h_axis.size):
                inter = ow * overlap_h[j]
                total += mass[i, j] * inter / (x * y + areas[i, j] - inter)
        out[k] = total
    return out


def brute_force_mean_iou(prior: ClassPrior, resolution: int = 200, bound_sigmas: float = 5.0) -> StBox:
    """Exhaustive maximizer used to check the pattern search.

    Candidates are the centers of a ``resolution x resolution`` grid of
    cells over the search bounds. Sparse priors (at most ``resolution``
    support points) also get their in-bounds support points as candidates,
    since a uniform grid can step over isolated atoms. Ties go to the
    smallest ``(w, h)``.
    """
    lower, upper = search_bounds(prior, bound_sigmas)
    axes = [lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution
            for lo, hi in zip(lower, upper)]
    gw, gh = np.meshgrid(axes[0], axes[1], indexing="ij")
    cand = [np.stack([gw.ravel(), gh.ravel()], axis=1)]
    si, sj = np.nonzero(prior.mass)
    if si.size <= resolution:
        atoms = np.stack([prior.w_axis[si], prior.h_axis[sj]], axis=1)
        inside = np.all((atoms >= lower) & (atoms <= upper), axis=1)
        cand.append(atoms[inside])
    cand = np.concatenate(cand)
    cand = np.unique(cand, axis=0)  # lexicographic (w, h) order
    values = _exhaustive(cand[:, 0].copy(), cand[:, 1].copy(),
                         prior.w_axis, prior.h_axis, np.ascontiguousarray(prior.mass))
    best = int(np.argmax(values))
    return StBox("mean_iou", float(cand[best, 0]), float(cand[best, 1]),
                 min(1.0, float(values[best])))
