"""Desk-scale composition of the pieces, plus predictions-file parsing."""

from __future__ import annotations

import logging
import os
from collections import Counter
from typing import Any, Mapping, Sequence

import numpy as np

from stboxkit.core import (
    Annotation,
    AnnotationFormatError,
    CenterBox,
    Dataset,
    ImageRecord,
    box_sizes,
    read_json,
)
from stboxkit.density import GRID_SIZE, ClassPrior, fit_priors, kl_divergence
from stboxkit.selection import Prediction, SelectionConfig, beta, select_with_source
from stboxkit.simulate import NoiseModel, box_quality, partition_dataset, weaken
from stboxkit.stbox import SolverConfig, StBox, mean_box, solve_mean_iou

logger = logging.getLogger(__name__)


def substream_seed(seed: int, name: str) -> int:
    """Named child seed, so each stage gets its own random stream."""
    key = [ord(c) for c in name]
    return int(np.random.SeedSequence([seed, *key]).generate_state(1, dtype=np.uint64)[0] >> 1)


# -- predictions -------------------------------------------------------------


def _prediction_from_json(obj: Any, loc: str) -> Prediction:
    if not isinstance(obj, dict):
        raise AnnotationFormatError("prediction must be an object", loc)
    bbox = obj.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise AnnotationFormatError("'bbox' must be a list of 4 numbers", f"{loc}.bbox")
    conf = obj.get("score")
    if isinstance(conf, bool) or not isinstance(conf, (int, float)):
        raise AnnotationFormatError("'score' must be a number", f"{loc}.score")
    cls = obj.get("class")
    if cls is not None and (isinstance(cls, bool) or not isinstance(cls, int)):
        raise AnnotationFormatError("'class' must be an integer", f"{loc}.class")
    try:
        return Prediction(CenterBox(*(float(v) for v in bbox)), float(conf), cls)
    except (TypeError, ValueError) as exc:
        raise AnnotationFormatError(str(exc), loc) from exc


def predictions_from_json(doc: Any) -> dict[str, list[Prediction]]:
    """Parse per-image predictions.

    Accepts a list of ``{"image_id", "predictions": [{"bbox", "score"}]}``
    entries, a single such entry, or ``{"images": [...]}`` around the list.
    A prediction may carry a ``"class"``; then it only competes for points
    of that class.
    """
    if isinstance(doc, dict) and "images" in doc:
        doc = doc["images"]
    if isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list):
        raise AnnotationFormatError("predictions must be a list of per-image entries")
    out: dict[str, list[Prediction]] = {}
    for i, entry in enumerate(doc):
        loc = f"$[{i}]"
        if not isinstance(entry, dict) or not isinstance(entry.get("image_id"), str):
            raise AnnotationFormatError("entry needs a string 'image_id'", loc)
        preds = entry.get("predictions", [])
        if not isinstance(preds, list):
            raise AnnotationFormatError("'predictions' must be a list", f"{loc}.predictions")
        out.setdefault(entry["image_id"], []).extend(
            _prediction_from_json(p, f"{loc}.predictions[{k}]") for k, p in enumerate(preds)
        )
    return out


def load_predictions(path: str | os.PathLike) -> dict[str, list[Prediction]]:
    return predictions_from_json(read_json(path))


# -- stages ------------------------------------------------------------------


def st_boxes_for(
    priors: Mapping[int, ClassPrior], config: SolverConfig | None = None
) -> dict[int, dict[str, StBox]]:
    out = {}
    for c, prior in sorted(priors.items()):
        mb = mean_box(prior)
        mib, result = solve_mean_iou(prior, config)
        logger.info(
            "class %d: mean (%.3f, %.3f) obj %.6f | mean-IOU (%.3f, %.3f) obj %.6f, "
            "%d iterations, final step (%.2g, %.2g)",
            c, mb.w, mb.h, mb.objective_value, mib.w, mib.h, mib.objective_value,
            result.iterations, *result.final_step,
        )
        out[c] = {"mean": mb, "mean_iou": mib}
    return out


def select_points(
    images: Dataset,
    st_sizes: Mapping[int, tuple[float, float]],
    predictions: Mapping[str, Sequence[Prediction]] | None = None,
    config: SelectionConfig = SelectionConfig(),
) -> tuple[list[ImageRecord], Counter]:
    """Replace each point with a box chosen by :func:`select_with_source`.

    Points whose class has no ST box stay points and are counted as
    ``"unresolved"``.
    """
    predictions = predictions or {}
    counts: Counter = Counter()
    out = []
    for img in images:
        preds = predictions.get(img.image_id, [])
        anns = []
        for ann in img.annotations:
            if ann.point is None:
                anns.append(ann)
                continue
            size = st_sizes.get(ann.class_id)
            if size is None:
                counts["unresolved"] += 1
                anns.append(ann)
                continue
            st = CenterBox(ann.point.px, ann.point.py, *size)
            candidates = [p for p in preds if p.class_id is None or p.class_id == ann.class_id]
            box, source = select_with_source(ann.point, st, candidates, config)
            counts[source] += 1
            anns.append(Annotation(ann.class_id, box=box, source=source))
        out.append(img.replace_annotations(anns))
    return out, counts


def _mean_area(images: Dataset, class_id: int) -> float:
    return float(np.mean([w * h for w, h in box_sizes(images, class_id)]))


def run_pipeline(
    images: Dataset,
    well_fraction: float,
    noise: NoiseModel,
    seed: int = 0,
    alpha: float = 0.0,
    predictions: Mapping[str, Sequence[Prediction]] | None = None,
    selection: SelectionConfig = SelectionConfig(),
    solver: SolverConfig | None = None,
    grid_size: int = GRID_SIZE,
) -> dict:
    """Partition, weaken, fit priors, select boxes and score them.

    Returns a JSON-ready report.
    """
    well, weak = partition_dataset(images, well_fraction, substream_seed(seed, "partition"))
    weak_points = weaken(weak, noise, substream_seed(seed, "points"))

    priors = fit_priors(well, grid_size)
    full_priors = fit_priors(images, grid_size)
    boxes = st_boxes_for(priors, solver)
    sizes = {c: (b["mean_iou"].w, b["mean_iou"].h) for c, b in boxes.items()}
    produced, counts = select_points(weak_points, sizes, predictions, selection)
    quality = box_quality(produced, weak) if any(img.annotations for img in weak) else None

    classes = {}
    for c, prior in priors.items():
        area = _mean_area(well, c)
        entry = {
            "prior": prior.summary(),
            "st_boxes": {k: b.as_row(c) for k, b in boxes[c].items()},
            "mean_area": area,
            "beta": beta(alpha, area),
        }
        if c in full_priors:
            entry["kl_full_from_well"] = kl_divergence(full_priors[c], prior)
        classes[str(c)] = entry

    return {
        "config": {
            "well_fraction": well_fraction,
            "seed": seed,
            "alpha": alpha,
            "noise_model": noise.describe(),
            "tau_s": selection.tau_s,
            "tau_iou": selection.tau_iou,
            "grid_size": grid_size,
        },
        "n_images": {"total": len(images), "well": len(well), "weak": len(weak)},
        "classes": classes,
        "skipped_classes": sorted(set(c for c in full_priors) - set(priors)),
        "selection": {k: counts.get(k, 0) for k in ("prediction", "st_box", "unresolved")},
        "quality": quality,
    }
