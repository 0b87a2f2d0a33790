import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inspecta.dataset import BBox, Label
from oracles import mann_whitney, staircase_ap

from inspecta.metrics import (
    Detection,
    ScoredLabel,
    auc,
    average_precision,
    confusion,
    dumps_predictions,
    evaluate_scored,
    iou,
    load_predictions,
    precision_recall,
    roc_curve,
)

NG, OK = Label.NG, Label.OK


def scored(pairs):
    return [ScoredLabel(f"i{k}", s, t) for k, (s, t) in enumerate(pairs)]


FOUR = [(0.9, NG), (0.6, OK), (0.4, NG), (0.1, OK)]


# -- confusion ---------------------------------------------------------------


def test_confusion_quadrants():
    cm = confusion([NG, NG, OK, OK], [NG, OK, OK, NG])
    assert (cm.tp, cm.fn, cm.fp, cm.tn) == (1, 1, 1, 1)


def test_confusion_all_correct_and_ok_positive():
    cm = confusion([NG] * 5 + [OK] * 5, [NG] * 5 + [OK] * 5)
    assert cm.fn == cm.fp == 0 and cm.total == 10
    truths, preds = [NG, NG, OK, OK, OK], [NG, OK, OK, OK, NG]
    a = confusion(truths, preds, NG)
    b = confusion(truths, preds, OK)
    assert (b.tp, b.fn, b.fp, b.tn) == (a.tn, a.fp, a.fn, a.tp)


def test_confusion_empty():
    with pytest.raises(ValueError):
        confusion([], [])


# -- ROC / AUC ---------------------------------------------------------------


def test_roc_hand_example():
    c = roc_curve(scored(FOUR))
    assert c.points == [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
    assert c.thresholds[0] == float("inf")
    assert auc(scored(FOUR)) == 0.75


def test_roc_perfect_and_constant():
    perfect = scored([(0.9, NG), (0.8, NG), (0.2, OK), (0.1, OK)])
    assert (0.0, 1.0) in roc_curve(perfect).points
    assert auc(perfect) == 1.0
    flat = scored([(0.5, NG), (0.5, OK), (0.5, NG)])
    c = roc_curve(flat)
    assert c.points == [(0.0, 0.0), (1.0, 1.0)]
    assert auc(flat) == 0.5


def test_auc_single_class_rejected():
    with pytest.raises(ValueError):
        auc(scored([(0.3, NG), (0.4, NG)]))


def test_auc_random_labels_near_half():
    rng = np.random.default_rng(11)
    s = rng.random(10_000)
    t = rng.random(10_000) < 0.5
    assert abs(auc(scored([(float(a), NG if b else OK) for a, b in zip(s, t)])) - 0.5) < 0.02


def test_roc_csv_header():
    text = roc_curve(scored(FOUR)).to_csv()
    assert text.splitlines()[0] == "threshold,fpr,tpr"
    assert len(text.splitlines()) == 6


@st.composite
def score_sets(draw, ties=True):
    n = draw(st.integers(2, 64))
    if ties:
        s = draw(st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 1.0]), min_size=n, max_size=n))
    else:
        s = draw(st.lists(st.floats(0, 1), min_size=n, max_size=n, unique=True))
    t = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    t[0], t[1] = True, False
    return [(a, NG if b else OK) for a, b in zip(s, t)]


@given(score_sets(ties=True))
def test_auc_equals_mann_whitney_with_ties(pairs):
    assert abs(auc(scored(pairs)) - mann_whitney(pairs)) <= 1e-12
    assert abs(roc_curve(scored(pairs)).area() - mann_whitney(pairs)) <= 1e-12


@given(score_sets(ties=False))
def test_auc_complement_symmetry(pairs):
    flipped = [(s, OK if t == NG else NG) for s, t in pairs]
    assert abs(auc(scored(pairs)) + auc(scored(flipped)) - 1.0) <= 1e-12


@given(score_sets(ties=True))
def test_auc_invariant_to_monotone_transform(pairs):
    squashed = [(s**3 * 0.5 + 0.1, t) for s, t in pairs]
    assert auc(scored(pairs)) == auc(scored(squashed))


@given(score_sets(ties=True))
def test_roc_validity(pairs):
    c = roc_curve(scored(pairs))
    assert c.points[0] == (0.0, 0.0) and c.points[-1] == (1.0, 1.0)
    assert all(np.diff(c.fpr) >= 0) and all(np.diff(c.tpr) >= 0)


# -- IOU ---------------------------------------------------------------------


def test_iou_hand_cases():
    a = BBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(5, 5, 7, 7)) == 0.0
    assert iou(a, BBox(1, 0, 3, 2)) == 1 / 3
    assert iou(a, BBox(2, 0, 4, 2)) == 0.0  # touching edges share no pixel


boxes = st.builds(
    lambda x, y, w, h: BBox(x, y, x + w, y + h),
    st.integers(0, 20), st.integers(0, 20), st.integers(1, 10), st.integers(1, 10),
)


@given(boxes, boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert iou(a, a) == 1.0


@given(boxes, boxes)
def test_iou_matches_pixel_count(a, b):
    grid_a = np.zeros((32, 32), bool)
    grid_b = np.zeros((32, 32), bool)
    grid_a[a.y_min : a.y_max, a.x_min : a.x_max] = True
    grid_b[b.y_min : b.y_max, b.x_min : b.x_max] = True
    ref = (grid_a & grid_b).sum() / (grid_a | grid_b).sum()
    assert iou(a, b) == pytest.approx(ref, abs=1e-15)


# -- AP ----------------------------------------------------------------------


def test_ap_hand_cases():
    gt = [[BBox(0, 0, 10, 10)]]
    assert average_precision([[Detection(BBox(0, 0, 10, 10), 0.9)]], gt) == 1.0
    assert average_precision([[]], gt) == 0.0
    miss_then_hit = [[Detection(BBox(50, 50, 60, 60), 0.9), Detection(BBox(0, 0, 10, 10), 0.8)]]
    assert average_precision(miss_then_hit, gt) == 0.5


def test_ap_requires_ground_truth():
    with pytest.raises(ValueError):
        average_precision([[Detection(BBox(0, 0, 1, 1), 0.5)]], [[]])


@st.composite
def detection_sets(draw):
    n_img = draw(st.integers(1, 3))
    dets, gts = [], []
    total = 0
    for _ in range(n_img):
        g = draw(st.lists(boxes, max_size=2))
        gts.append(g)
        k = draw(st.integers(0, max(0, 4 - (total // 3))))
        ds = [Detection(b, s) for b, s in zip(draw(st.lists(boxes, min_size=k, max_size=k)),
                                              draw(st.lists(st.sampled_from([0.2, 0.4, 0.6, 0.8, 0.9]), min_size=k, max_size=k)))]
        total += len(ds)
        dets.append(ds)
    if not any(gts):
        gts[0] = [BBox(0, 0, 5, 5)]
    return dets, gts


@given(detection_sets(), st.sampled_from([0.1, 0.3, 0.5]))
def test_ap_matches_staircase_reference(data, thr):
    dets, gts = data
    assert sum(len(d) for d in dets) <= 12
    assert average_precision(dets, gts, thr) == pytest.approx(staircase_ap(dets, gts, thr), abs=1e-12)


def test_precision_recall_monotone_recall():
    gts = [[BBox(0, 0, 4, 4), BBox(10, 10, 14, 14)]]
    dets = [[Detection(BBox(0, 0, 4, 4), 0.9), Detection(BBox(30, 30, 34, 34), 0.7),
             Detection(BBox(10, 10, 14, 14), 0.5)]]
    p, r = precision_recall(dets, gts)
    assert list(r) == [0.5, 0.5, 1.0]
    assert list(p) == [1.0, 0.5, 2 / 3]


# -- evaluation bundle and predictions file ------------------------------------


def test_evaluate_scored_boundaries():
    perfect = evaluate_scored(scored([(0.9, NG), (0.1, OK)]), 0.5)
    assert perfect.confusion.fn == perfect.confusion.fp == 0 and perfect.auc == 1.0
    flat = evaluate_scored(scored([(0.5, NG), (0.5, OK)]), 0.5)
    assert flat.confusion.tp == 1 and flat.confusion.fp == 1
    four = evaluate_scored(scored(FOUR), 0.5)
    assert four.confusion.fp == 1 and four.confusion.fn == 1


def test_scored_label_range():
    with pytest.raises(ValueError):
        ScoredLabel("x", 1.5, NG)


def test_predictions_round_trip(tmp_path):
    text = dumps_predictions("m1", "max_box", [
        {"image_id": "a", "score": 0.7, "detections": [Detection(BBox(1, 2, 3, 4), 0.7)]},
        {"image_id": "b", "score": 0.0, "detections": []},
    ])
    doc = json.loads(text)
    assert set(doc) == {"model_id", "aggregation", "images"}
    assert set(doc["images"][0]["detections"][0]) == {"x_min", "y_min", "x_max", "y_max", "score"}
    p = tmp_path / "p.json"
    p.write_text(text)
    back = load_predictions(p)
    assert back["images"][0]["detections"][0] == Detection(BBox(1, 2, 3, 4), 0.7)


def test_exhaustive_ap_small_grid():
    # every ordering of three detections (two hits, one miss) against two gts
    gts = [[BBox(0, 0, 4, 4), BBox(10, 10, 14, 14)]]
    base = [BBox(0, 0, 4, 4), BBox(10, 10, 14, 14), BBox(30, 30, 34, 34)]
    for perm in itertools.permutations([0.9, 0.6, 0.3]):
        dets = [[Detection(b, s) for b, s in zip(base, perm)]]
        assert average_precision(dets, gts) == pytest.approx(staircase_ap(dets, gts, 0.5))
