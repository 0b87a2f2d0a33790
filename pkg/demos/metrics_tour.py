"""A tour of the scoring code on numbers small enough to check by hand.

Run it with ``python3 demos/metrics_tour.py``. Nothing is written to disk.
"""
from inspecta.dataset import BBox, Label
from inspecta.metrics import Detection, ScoredLabel, auc, average_precision, iou, roc_curve

NG, OK = Label.NG, Label.OK

# Four images. The best NG outranks everything, but one OK part (0.6) beats the
# weaker NG part (0.4), so three of the four NG/OK pairs are ordered correctly.
scores = [ScoredLabel("a", 0.9, NG), ScoredLabel("b", 0.6, OK),
          ScoredLabel("c", 0.4, NG), ScoredLabel("d", 0.1, OK)]
curve = roc_curve(scores)
print("ROC points:", curve.points)
print("AUC:", auc(scores), "(3 of 4 pairs ordered)")

# Ties get half credit, which is why a constant scorer lands on exactly 0.5.
flat = [ScoredLabel(str(i), 0.5, t) for i, t in enumerate([NG, OK, NG, OK])]
print("constant scorer AUC:", auc(flat))

# Boxes are half-open pixel ranges: [0, 2) x [0, 2) covers four pixels.
a = BBox(0, 0, 2, 2)
print("IoU with a one-column shift:", iou(a, BBox(1, 0, 3, 2)))
print("IoU of edge-touching boxes:", iou(a, BBox(2, 0, 4, 2)))

# A confident miss ahead of a hit halves AP: precision is 1/2 when recall reaches 1.
gt = [[BBox(0, 0, 10, 10)]]
dets = [[Detection(BBox(50, 50, 60, 60), 0.9), Detection(BBox(0, 0, 10, 10), 0.8)]]
print("AP, miss then hit:", average_precision(dets, gt))
swapped = [[Detection(BBox(50, 50, 60, 60), 0.8), Detection(BBox(0, 0, 10, 10), 0.9)]]
print("AP, hit first:   ", average_precision(swapped, gt))
