"""Point-to-box selection, anchor labelling and the mixed regression loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from stboxkit.core import CenterBox, PointAnnotation, iou

FOREGROUND_IOU = 0.5
BACKGROUND_IOU = 0.4


@dataclass(frozen=True)
class Prediction:
    box: CenterBox
    confidence: float
    class_id: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class SelectionConfig:
    tau_s: float = 0.2
    tau_iou: float = 0.5

    def __post_init__(self):
        for name in ("tau_s", "tau_iou"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")


def score(prediction: Prediction, point: PointAnnotation) -> float:
    """Confidence damped by the squared pixel distance to the point.

    The distance is not normalized, so the score is ~0 beyond a few pixels.
    """
    dx = prediction.box.cx - point.px
    dy = prediction.box.cy - point.py
    return prediction.confidence * math.exp(-(dx * dx + dy * dy))


def select_with_source(
    point: PointAnnotation,
    st_box: CenterBox,
    predictions: Sequence[Prediction],
    config: SelectionConfig = SelectionConfig(),
) -> tuple[CenterBox, Literal["prediction", "st_box"]]:
    """Like :func:`select_box` but also says where the box came from."""
    best, best_score = None, -1.0
    for pred in predictions:
        if pred.confidence < config.tau_s or iou(st_box, pred.box) < config.tau_iou:
            continue
        s = score(pred, point)
        if s > best_score:
            best, best_score = pred, s
    if best is None:
        return st_box, "st_box"
    return best.box, "prediction"


def select_box(
    point: PointAnnotation,
    st_box: CenterBox,
    predictions: Sequence[Prediction],
    config: SelectionConfig = SelectionConfig(),
) -> CenterBox:
    """Box that stands in for a point annotation.

    Predictions need confidence >= ``tau_s`` and IOU >= ``tau_iou`` with the
    ST box centered at the point; the best scoring survivor wins (first one
    on ties). With no survivor the ST box itself is returned.
    """
    return select_with_source(point, st_box, predictions, config)[0]


@dataclass(frozen=True)
class AnchorLabel:
    kind: Literal["foreground", "background", "ignore"]
    target: int | None = None

    def __post_init__(self):
        if (self.kind == "foreground") != (self.target is not None):
            raise ValueError("only foreground labels carry a target index")

    @classmethod
    def foreground(cls, target: int) -> "AnchorLabel":
        return cls("foreground", target)

    @classmethod
    def background(cls) -> "AnchorLabel":
        return cls("background")

    @classmethod
    def ignore(cls) -> "AnchorLabel":
        return cls("ignore")


def assign_anchors(anchors: Sequence[CenterBox], targets: Sequence[CenterBox]) -> list[AnchorLabel]:
    """RetinaNet rule: max IOU >= 0.5 foreground, < 0.4 background, else ignore."""
    labels = []
    for anchor in anchors:
        best, best_iou = None, 0.0
        for t, target in enumerate(targets):
            v = iou(anchor, target)
            if best is None or v > best_iou:
                best, best_iou = t, v
        if best is not None and best_iou >= FOREGROUND_IOU:
            labels.append(AnchorLabel.foreground(best))
        elif best_iou < BACKGROUND_IOU:
            labels.append(AnchorLabel.background())
        else:
            labels.append(AnchorLabel.ignore())
    return labels


def beta(alpha: float, mean_area: float) -> float:
    """Point-loss downweighting exponent ``alpha / sqrt(A_c)``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if mean_area <= 0:
        raise ValueError("mean_area must be positive")
    return alpha / math.sqrt(mean_area)


@dataclass
class LossBatch:
    """Regression targets for one batch of foreground anchors.

    ``box_items`` are ``(predicted, target)`` 4-vectors; ``point_items`` are
    ``(predicted, target, class_mean_area)`` with 2-vector center offsets.
    """

    box_items: list = field(default_factory=list)
    point_items: list = field(default_factory=list)
    alpha: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        for pred, target in self.box_items:
            if np.shape(pred) != (4,) or np.shape(target) != (4,):
                raise ValueError("box items need 4-vectors")
        for pred, target, area in self.point_items:
            if np.shape(pred) != (2,) or np.shape(target) != (2,):
                raise ValueError("point items need 2-vectors")
            if area <= 0:
                raise ValueError("class mean area must be positive")


def regression_loss(batch: LossBatch) -> float:
    """Mean L1 over box targets plus mean (1 + beta)-downweighted L1 over points.

    An empty group adds nothing.
    """
    if not batch.box_items and not batch.point_items:
        raise ValueError("empty loss batch")
    loss = 0.0
    if batch.box_items:
        loss += sum(
            float(np.abs(np.subtract(pred, target)).sum()) for pred, target in batch.box_items
        ) / len(batch.box_items)
    if batch.point_items:
        loss += sum(
            float(np.abs(np.subtract(pred, target)).sum()) / (1.0 + beta(batch.alpha, area))
            for pred, target, area in batch.point_items
        ) / len(batch.point_items)
    return loss
