"""Image-level and box-level evaluation: confusion matrix, ROC/AUC, IOU, AP."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .dataset import BBox, Label, write_atomic


@dataclass(frozen=True)
class ScoredLabel:
    image_id: str
    score: float
    truth: Label

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"{self.image_id}: score {self.score} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {"image_id": self.image_id, "score": self.score, "truth": self.truth.value}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ScoredLabel:
        return cls(str(d["image_id"]), float(d["score"]), Label(d["truth"]))


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score {self.score} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {**self.box.to_dict(), "score": self.score}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Detection:
        return cls(BBox.from_dict(d), float(d["score"]))


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int
    positive_class: Label = Label.NG

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def to_dict(self) -> dict[str, Any]:
        return {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn,
                "positive_class": self.positive_class.value}


@dataclass(frozen=True)
class RocCurve:
    fpr: tuple[float, ...]
    tpr: tuple[float, ...]
    # thresholds[i] is the score cut producing point i; +inf for the (0, 0) origin
    thresholds: tuple[float, ...]

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr, self.tpr))

    def area(self) -> float:
        return float(np.trapezoid(self.tpr, self.fpr))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
        return buf.getvalue()


def confusion(
    truths: Sequence[Label], predicted: Sequence[Label], positive_class: Label = Label.NG
) -> ConfusionMatrix:
    if len(truths) != len(predicted):
        raise ValueError("truths and predictions differ in length")
    if not truths:
        raise ValueError("confusion matrix of an empty evaluation set")
    tp = fn = fp = tn = 0
    for t, p in zip(truths, predicted):
        t_pos, p_pos = Label(t) == positive_class, Label(p) == positive_class
        if t_pos and p_pos:
            tp += 1
        elif t_pos:
            fn += 1
        elif p_pos:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fn, fp, tn, positive_class)


def _scores_and_truths(scored: Iterable[ScoredLabel]) -> tuple[np.ndarray, np.ndarray]:
    scored = list(scored)
    scores = np.array([s.score for s in scored], dtype=np.float64)
    pos = np.array([s.truth == Label.NG for s in scored], dtype=bool)
    if pos.all() or not pos.any():
        raise ValueError("ROC/AUC need both NG and OK samples")
    return scores, pos


def roc_curve(scored: Iterable[ScoredLabel]) -> RocCurve:
    """Threshold sweep over distinct scores, highest first; NG is the positive class.

    Tied scores form one step, so the curve can contain diagonal segments.
    """
    scores, pos = _scores_and_truths(scored)
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], pos[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(p)[ends]
    fp = np.cumsum(~p)[ends]
    n_pos, n_neg = int(p.sum()), int((~p).sum())
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thresholds = np.r_[np.inf, s[ends]]
    return RocCurve(tuple(fpr.tolist()), tuple(tpr.tolist()), tuple(thresholds.tolist()))


def auc(scored: Iterable[ScoredLabel]) -> float:
    """Area under the ROC curve, computed exactly from rank counts.

    Equals the trapezoidal area of :func:`roc_curve` and the Mann-Whitney
    statistic with ties counted half.
    """
    scores, pos = _scores_and_truths(scored)
    order = np.argsort(scores, kind="stable")
    s, p = scores[order], pos[order]
    n_pos, n_neg = int(p.sum()), int((~p).sum())
    # per tie group: positives in group times negatives strictly below + half the in-group negatives
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    neg_cum = np.r_[0, np.cumsum(~p)]
    grp_pos = np.add.reduceat(p.astype(np.int64), starts)
    grp_neg = np.add.reduceat((~p).astype(np.int64), starts)
    below = neg_cum[starts]
    twice = int(np.sum(grp_pos * (2 * below + grp_neg)))
    return twice / (2.0 * n_pos * n_neg)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def precision_recall(
    detections: Sequence[Sequence[Detection]],
    gts: Sequence[Sequence[BBox]],
    iou_threshold: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Precision/recall after each detection in the global score ranking."""
    if len(detections) != len(gts):
        raise ValueError("detections and ground truth cover different image counts")
    n_gt = sum(len(g) for g in gts)
    if n_gt == 0:
        raise ValueError("average precision needs at least one ground-truth box")
    ranked = sorted(
        ((d.score, img, k) for img, dets in enumerate(detections) for k, d in enumerate(dets)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    matched = [np.zeros(len(g), dtype=bool) for g in gts]
    hits = np.zeros(len(ranked), dtype=bool)
    for r, (_, img, k) in enumerate(ranked):
        box = detections[img][k].box
        best, best_j = -1.0, -1
        for j, g in enumerate(gts[img]):
            if matched[img][j]:
                continue
            v = iou(box, g)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= iou_threshold:
            matched[img][best_j] = True
            hits[r] = True
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(ranked) + 1)
    recall = tp / n_gt
    return precision, recall


def average_precision(
    detections: Sequence[Sequence[Detection]],
    gts: Sequence[Sequence[BBox]],
    iou_threshold: float = 0.5,
) -> float:
    """Area under the max-interpolated precision/recall curve, pooled over images."""
    precision, recall = precision_recall(detections, gts, iou_threshold)
    if len(precision) == 0:
        return 0.0
    # interpolated precision: running max from the right
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_r) * interp))


@dataclass(frozen=True)
class EvaluationSummary:
    confusion: ConfusionMatrix
    auc: float
    roc: RocCurve
    threshold: float


def evaluate_scored(scored: Sequence[ScoredLabel], threshold: float = 0.5) -> EvaluationSummary:
    """Bundle confusion-at-threshold (score >= t means NG), AUC and ROC."""
    scored = list(scored)
    truths = [s.truth for s in scored]
    preds = [Label.NG if s.score >= threshold else Label.OK for s in scored]
    return EvaluationSummary(confusion(truths, preds), auc(scored), roc_curve(scored), threshold)


def dumps_predictions(model_id: str, aggregation: str, images: Sequence[dict[str, Any]]) -> str:
    """Serialize per-image predictions.

    Each entry of ``images`` holds ``image_id``, ``score`` and a list of
    :class:`Detection` under ``detections``.
    """
    doc = {
        "model_id": model_id,
        "aggregation": aggregation,
        "images": [
            {
                "image_id": im["image_id"],
                "score": float(im["score"]),
                "detections": [d.to_dict() for d in im.get("detections", ())],
            }
            for im in images
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def load_predictions(path: str | Path) -> dict[str, Any]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("model_id", "aggregation", "images"):
        if key not in doc:
            raise ValueError(f"{path}: predictions file missing {key!r}")
    for im in doc["images"]:
        im["detections"] = [Detection.from_dict(d) for d in im.get("detections", [])]
    return doc


def write_roc_csv(curve: RocCurve, path: str | Path) -> None:
    write_atomic(Path(path), curve.to_csv().encode("utf-8"))
