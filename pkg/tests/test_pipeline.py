import json

import pytest

from conftest import synthetic_dataset
from stboxkit.core import (
    Annotation,
    AnnotationFormatError,
    CenterBox,
    ImageRecord,
    PointAnnotation,
    dumps_json,
    iou,
)
from stboxkit.pipeline import predictions_from_json, run_pipeline, select_points, substream_seed
from stboxkit.selection import Prediction
from stboxkit.simulate import DegeneratePartitionError, NoiseModel, default_noise_model, partition_dataset

ZERO = NoiseModel(0.0, 0.0, 0.0)
FIXED_SIZES = {0: (20.0, 20.0, 0.0), 1: (40.0, 30.0, 0.0)}


def echo_predictions(images, seed):
    _, weak = partition_dataset(images, 0.2, substream_seed(seed, "partition"))
    return {
        img.image_id: [Prediction(a.box, 1.0) for a in img.annotations]
        for img in weak
    }


def test_zero_noise_point_mass_quality_is_one():
    images = synthetic_dataset(60, FIXED_SIZES, per_image=2, seed=1)
    report = run_pipeline(images, 0.2, ZERO, seed=3)
    assert report["quality"] == 1.0
    assert report["selection"] == {"prediction": 0, "st_box": 192, "unresolved": 0}
    for c, (w, h, _) in FIXED_SIZES.items():
        box = report["classes"][str(c)]["st_boxes"]["mean_iou"]
        # duplicate sizes get the 0.5 px bandwidth floor, not an exact atom
        assert iou(CenterBox(0, 0, box["w"], box["h"]), CenterBox(0, 0, w, h)) > 0.99


def test_echoed_predictions_are_selected():
    images = synthetic_dataset(60, FIXED_SIZES, per_image=2, seed=1)
    report = run_pipeline(images, 0.2, ZERO, seed=3, predictions=echo_predictions(images, 3))
    assert report["quality"] == 1.0
    assert report["selection"] == {"prediction": 192, "st_box": 0, "unresolved": 0}


def test_full_well_fraction_is_degenerate():
    images = synthetic_dataset(10, FIXED_SIZES, per_image=1)
    with pytest.raises(DegeneratePartitionError, match="degenerate partition"):
        run_pipeline(images, 1.0, ZERO)


def test_report_contents():
    images = synthetic_dataset(50, {0: (30, 30, 3), 1: (50, 40, 6)}, per_image=3, seed=2)
    report = run_pipeline(images, 0.3, default_noise_model(), seed=1, alpha=10)
    assert report["n_images"] == {"total": 50, "well": 15, "weak": 35}
    assert 0.0 <= report["quality"] <= 1.0
    for entry in report["classes"].values():
        assert entry["beta"] == pytest.approx(10 / entry["mean_area"] ** 0.5)
        assert entry["kl_full_from_well"] >= 0
        assert entry["st_boxes"]["mean_iou"]["objective"] >= entry["st_boxes"]["mean"]["objective"]
    json.dumps(report)


def test_pipeline_deterministic():
    images = synthetic_dataset(40, {0: (30, 30, 3)}, per_image=3, seed=2)
    a = dumps_json(run_pipeline(images, 0.25, default_noise_model(), seed=11))
    b = dumps_json(run_pipeline(images, 0.25, default_noise_model(), seed=11))
    assert a == b


def test_unusable_class_leaves_points():
    weak = [ImageRecord("p", 100, 100, (Annotation(5, point=PointAnnotation(1, 1)),
                                        Annotation(0, point=PointAnnotation(20, 20))))]
    out, counts = select_points(weak, {0: (8.0, 8.0)})
    assert counts == {"unresolved": 1, "st_box": 1}
    assert out[0].annotations[0].is_point
    assert out[0].annotations[1].box == CenterBox(20, 20, 8, 8)
    assert out[0].annotations[1].source == "st_box"


def test_class_tagged_predictions_only_match_their_class():
    weak = [ImageRecord("p", 100, 100, (Annotation(0, point=PointAnnotation(20, 20)),))]
    preds = {"p": [Prediction(CenterBox(20, 20, 8, 8), 0.9, class_id=1)]}
    out, counts = select_points(weak, {0: (8.0, 8.0)}, preds)
    assert counts == {"st_box": 1}
    preds = {"p": [Prediction(CenterBox(20, 20, 8, 7), 0.9, class_id=0)]}
    out, counts = select_points(weak, {0: (8.0, 8.0)}, preds)
    assert counts == {"prediction": 1}
    assert out[0].annotations[0].box == CenterBox(20, 20, 8, 7)


def test_predictions_parsing_variants():
    entry = {"image_id": "a", "predictions": [{"bbox": [1, 2, 3, 4], "score": 0.5}]}
    expected = {"a": [Prediction(CenterBox(1, 2, 3, 4), 0.5)]}
    assert predictions_from_json([entry]) == expected
    assert predictions_from_json(entry) == expected
    assert predictions_from_json({"images": [entry]}) == expected


@pytest.mark.parametrize(
    "doc, where",
    [
        ([{"predictions": []}], "$[0]"),
        ([{"image_id": "a", "predictions": [{"bbox": [1, 2, 3], "score": 1}]}], "$[0].predictions[0].bbox"),
        ([{"image_id": "a", "predictions": [{"bbox": [1, 2, 3, 4], "score": "x"}]}], "$[0].predictions[0].score"),
        ([{"image_id": "a", "predictions": [{"bbox": [1, 2, 3, 4], "score": 2.0}]}], "$[0].predictions[0]"),
    ],
)
def test_predictions_parse_errors(doc, where):
    with pytest.raises(AnnotationFormatError) as info:
        predictions_from_json(doc)
    assert info.value.location == where


def test_substreams_differ():
    assert substream_seed(0, "partition") != substream_seed(0, "points")
    assert substream_seed(0, "points") == substream_seed(0, "points")
