import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alg1_cases import CASES, POINT, ST_BOX, expected_box, predictions
from stboxkit.core import CenterBox, PointAnnotation, iou
from stboxkit.selection import (
    AnchorLabel,
    LossBatch,
    Prediction,
    SelectionConfig,
    assign_anchors,
    beta,
    regression_loss,
    score,
    select_box,
    select_with_source,
)


def pred(cx, cy, conf, w=20, h=20):
    return Prediction(CenterBox(cx, cy, w, h), conf)


def test_default_thresholds():
    cfg = SelectionConfig()
    assert (cfg.tau_s, cfg.tau_iou) == (0.2, 0.5)


@pytest.mark.parametrize("bad", [dict(tau_s=0), dict(tau_iou=1.5), dict(tau_s=-0.1)])
def test_selection_config_validation(bad):
    with pytest.raises(ValueError):
        SelectionConfig(**bad)


def test_score_at_point():
    assert score(pred(100, 100, 0.5), POINT) == 0.5


def test_score_unit_distance():
    assert score(pred(101, 100, 1.0), POINT) == pytest.approx(math.exp(-1))
    assert score(pred(101, 100, 1.0), POINT) == pytest.approx(0.36788, abs=1e-5)


def test_score_distance_five():
    assert score(pred(103, 104, 1.0), POINT) == pytest.approx(math.exp(-25), rel=1e-12)
    assert score(pred(103, 104, 1.0), POINT) == pytest.approx(1.39e-11, rel=1e-2)


@given(st.floats(0, 5), st.floats(0.01, 5), st.floats(0, 2 * math.pi))
def test_score_decreases_with_distance(r, dr, theta):
    near = pred(100 + r * math.cos(theta), 100 + r * math.sin(theta), 0.7)
    far = pred(100 + (r + dr) * math.cos(theta), 100 + (r + dr) * math.sin(theta), 0.7)
    assert score(far, POINT) < score(near, POINT) or score(near, POINT) == 0.0


@pytest.mark.parametrize("case", CASES, ids=[c[0] for c in CASES])
def test_algorithm_cases(case):
    box, source = expected_box(case)
    assert select_with_source(POINT, ST_BOX, predictions(case)) == (box, source)
    assert select_box(POINT, ST_BOX, predictions(case)) == box


def test_case_notes_match_geometry():
    assert iou(ST_BOX, CenterBox(100, 100, 20, 16)) == pytest.approx(0.8)
    assert iou(ST_BOX, CenterBox(100, 100, 20, 8)) == pytest.approx(0.4)
    assert iou(ST_BOX, CenterBox(100, 100, 20, 10)) == 0.5
    assert iou(ST_BOX, CenterBox(112, 100, 20, 20)) == pytest.approx(0.25)


def test_strict_thresholds_fall_back_to_st_box():
    preds = [pred(100, 100, 0.99), pred(100.2, 100, 0.9)]
    assert select_box(POINT, ST_BOX, preds, SelectionConfig(tau_s=1.0)) == ST_BOX


@given(st.lists(st.tuples(st.floats(90, 110), st.floats(90, 110), st.floats(5, 40),
                          st.floats(5, 40), st.floats(0, 1)), max_size=8))
def test_output_is_st_box_or_valid_prediction(raw):
    preds = [Prediction(CenterBox(*r[:4]), r[4]) for r in raw]
    cfg = SelectionConfig()
    box, source = select_with_source(POINT, ST_BOX, preds, cfg)
    if source == "st_box":
        assert box == ST_BOX
        assert not any(p.confidence >= cfg.tau_s and iou(ST_BOX, p.box) >= cfg.tau_iou for p in preds)
    else:
        assert iou(ST_BOX, box) >= cfg.tau_iou
        chosen = next(p for p in preds if p.box == box)
        assert chosen.confidence >= cfg.tau_s


def test_prediction_confidence_range():
    with pytest.raises(ValueError):
        pred(0, 0, 1.2)


# -- anchors -------------------------------------------------------------

TARGET = CenterBox(0, 0, 10, 10)


@pytest.mark.parametrize(
    "anchor_w, expected_iou, kind",
    [(None, 0.0, "background"), (3.9, 0.39, "background"), (4.0, 0.40, "ignore"),
     (4.5, 0.45, "ignore"), (5.0, 0.50, "foreground"), (10.0, 1.0, "foreground")],
)
def test_anchor_thresholds(anchor_w, expected_iou, kind):
    anchor = CenterBox(100, 100, 10, 10) if anchor_w is None else CenterBox(0, 0, anchor_w, 10)
    assert iou(anchor, TARGET) == pytest.approx(expected_iou, abs=1e-12)
    (label,) = assign_anchors([anchor], [TARGET])
    assert label.kind == kind
    assert label.target == (0 if kind == "foreground" else None)


def test_anchor_picks_best_target_first_on_ties():
    targets = [CenterBox(50, 50, 10, 10), CenterBox(0, 0, 10, 10), CenterBox(0, 0, 10, 10)]
    assert assign_anchors([CenterBox(0, 0, 10, 10)], targets) == [AnchorLabel.foreground(1)]


def test_anchors_without_targets_are_background():
    anchors = [CenterBox(i, i, 5, 5) for i in range(4)]
    assert assign_anchors(anchors, []) == [AnchorLabel.background()] * 4


def test_every_anchor_gets_one_label(rng):
    anchors = [CenterBox(*rng.uniform(0, 50, 2), *rng.uniform(2, 20, 2)) for _ in range(100)]
    targets = [CenterBox(*rng.uniform(0, 50, 2), *rng.uniform(2, 20, 2)) for _ in range(5)]
    labels = assign_anchors(anchors, targets)
    assert len(labels) == len(anchors)
    for a, lab in zip(anchors, labels):
        m = max(iou(a, t) for t in targets)
        assert lab.kind == ("foreground" if m >= 0.5 else "background" if m < 0.4 else "ignore")


def test_anchor_label_validation():
    with pytest.raises(ValueError):
        AnchorLabel("foreground")
    with pytest.raises(ValueError):
        AnchorLabel("background", 2)


# -- loss ------------------------------------------------------------------


@pytest.mark.parametrize(
    "alpha, area, expected",
    [(0, 50.0, 0.0), (10, 100, 1.0), (10, 324, 10 / 18)],
)
def test_beta(alpha, area, expected):
    assert beta(alpha, area) == pytest.approx(expected)


def test_beta_smallest_object():
    assert beta(10, 18**2) == pytest.approx(0.5556, abs=1e-4)


def test_beta_rejects_bad_input():
    with pytest.raises(ValueError):
        beta(-1, 10)
    with pytest.raises(ValueError):
        beta(1, 0)


def test_loss_box_only():
    assert regression_loss(LossBatch(box_items=[((1, 1, 1, 1), (0, 0, 0, 0))])) == 4.0


def test_loss_point_no_noise():
    assert regression_loss(LossBatch(point_items=[((2, 0), (0, 0), 100.0)], alpha=0)) == 2.0


def test_loss_point_downweighted():
    assert regression_loss(LossBatch(point_items=[((2, 0), (0, 0), 100.0)], alpha=10)) == 1.0


def test_loss_mixes_group_means():
    batch = LossBatch(
        box_items=[((1, 0, 0, 0), (0, 0, 0, 0)), ((0, 0, 0, 3), (0, 0, 0, 0))],
        point_items=[((2, 0), (0, 0), 100.0), ((0, 4), (0, 0), 400.0)],
        alpha=10,
    )
    # boxes: (1 + 3) / 2; points: (2 / 2 + 4 / 1.5) / 2
    assert regression_loss(batch) == pytest.approx(2 + (1 + 4 / 1.5) / 2)


def test_empty_loss_batch():
    with pytest.raises(ValueError, match="empty loss batch"):
        regression_loss(LossBatch())


@pytest.mark.parametrize(
    "kwargs",
    [dict(alpha=-1, box_items=[((0,) * 4, (0,) * 4)]),
     dict(point_items=[((0, 0), (0, 0), 0.0)]),
     dict(box_items=[((0, 0), (0, 0))])],
)
def test_loss_batch_validation(kwargs):
    with pytest.raises(ValueError):
        LossBatch(**kwargs)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(1, 1e4)), min_size=1, max_size=6),
       st.floats(0, 50), st.floats(0, 50))
def test_loss_non_increasing_in_alpha(items, a1, a2):
    lo, hi = sorted((a1, a2))
    point_items = [((x, y), (0.0, 0.0), area) for x, y, area in items]
    box_items = [((1.0, -1.0, 0.5, 0.0), (0.0, 0.0, 0.0, 0.0))]
    l_lo = regression_loss(LossBatch(box_items, point_items, lo))
    l_hi = regression_loss(LossBatch(box_items, point_items, hi))
    assert l_hi <= l_lo + 1e-12
    assert l_hi >= 0
