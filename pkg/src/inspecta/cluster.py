"""Curation clustering: pooled-pixel features, Ward agglomeration, silhouette k selection
and cluster-exclusion training sets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import DatasetManifest

CURATION_GRID = 16


class ClusteringError(ValueError):
    pass


def curation_features(image: np.ndarray, image_size: int = 128, grid: int = CURATION_GRID) -> np.ndarray:
    """Mean-pool to ``grid`` x ``grid``, flatten, scale to unit length.

    An all-zero image has no direction and stays the zero vector.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (image_size, image_size):
        raise ValueError(f"image size {image.shape} does not match curation size {image_size}")
    c = image_size // grid
    v = image.reshape(grid, c, grid, c).mean(axis=(1, 3)).ravel()
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def curation_config_hash() -> str:
    from .syngen import config_hash

    return config_hash({"features": "mean_pool_unit_norm", "grid": CURATION_GRID})


@dataclass(frozen=True)
class Merge:
    a: int  # cluster ids (smallest member index) of the merged pair, a < b
    b: int
    delta: float
    size: int


@dataclass(frozen=True)
class ClusterAssignment:
    k: int
    labels: Mapping[str, int]
    feature_config_hash: str = ""

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ClusteringError(f"a cluster assignment needs k >= 2, got {self.k}")
        used = set(self.labels.values())
        if used != set(range(self.k)):
            raise ClusteringError(f"labels must use every cluster index in [0, {self.k})")

    def members(self, j: int) -> list[str]:
        return [i for i, c in self.labels.items() if c == j]

    def sizes(self) -> list[int]:
        return [len(self.members(j)) for j in range(self.k)]


def ward_delta(xa: np.ndarray, xb: np.ndarray) -> float:
    """Increase in within-cluster sum of squares from merging point sets ``xa`` and ``xb``."""
    na, nb = len(xa), len(xb)
    d = xa.mean(axis=0) - xb.mean(axis=0)
    return na * nb / (na + nb) * float(d @ d)


class _Agglomerator:
    """Greedy Ward merging with centroids recomputed from members after each merge."""

    def __init__(self, X: np.ndarray) -> None:
        self.X = X
        n = len(X)
        self.members: dict[int, list[int]] = {i: [i] for i in range(n)}
        self.centroid = {i: X[i].copy() for i in range(n)}
        sq = cdist(X, X, "sqeuclidean")
        # pairwise delta for singletons is half the squared distance
        self.delta = 0.5 * sq
        np.fill_diagonal(self.delta, np.inf)
        self.alive = np.ones(n, dtype=bool)
        self.log: list[Merge] = []

    def step(self) -> None:
        D = np.where(self.alive[:, None] & self.alive[None, :], self.delta, np.inf)
        D = np.triu(D, 1) + np.tril(np.full_like(D, np.inf))
        # argmin scans row-major, so the first hit is the smallest (a, b)
        a, b = np.unravel_index(int(np.argmin(D)), D.shape)
        a, b = int(a), int(b)
        merged = self.members.pop(a) + self.members.pop(b)
        merged.sort()
        self.log.append(Merge(a, b, float(D[a, b]), len(merged)))
        self.alive[b] = False
        self.members[a] = merged
        self.centroid.pop(b)
        self.centroid[a] = self.X[merged].mean(axis=0)
        na = len(merged)
        for o in np.flatnonzero(self.alive):
            if o == a:
                continue
            no = len(self.members[int(o)])
            d = self.centroid[a] - self.centroid[int(o)]
            self.delta[a, o] = self.delta[o, a] = na * no / (na + no) * float(d @ d)

    def labels(self) -> np.ndarray:
        out = np.empty(len(self.X), dtype=np.int64)
        for j, cid in enumerate(sorted(self.members)):
            out[self.members[cid]] = j
        return out


def _check_features(features: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ClusteringError("features must be a 2-D array (samples x dims)")
    if not np.all(np.isfinite(X)):
        raise ClusteringError("features must be finite")
    return X


def agglomerate(
    features: Sequence[Sequence[float]] | np.ndarray, k: int
) -> tuple[np.ndarray, list[Merge]]:
    """Ward clustering down to ``k`` clusters.

    Returns per-sample labels in [0, k), numbered by each cluster's smallest
    member index, and the merge log. Clusters are identified during merging
    by their smallest member index; among equal deltas the smallest id pair
    merges first.
    """
    X = _check_features(features)
    n = len(X)
    if k < 1 or n < k:
        raise ClusteringError(f"cannot form {k} clusters from {n} samples")
    agg = _Agglomerator(X)
    for _ in range(n - k):
        agg.step()
    return agg.labels(), agg.log


def silhouette_samples(features: Sequence[Sequence[float]] | np.ndarray, labels: Sequence[int]) -> np.ndarray:
    X = _check_features(features)
    labels = np.asarray(labels)
    ids = np.unique(labels)
    if len(ids) < 2:
        raise ClusteringError("silhouette needs at least 2 clusters")
    D = cdist(X, X)
    s = np.zeros(len(X))
    masks = [labels == c for c in ids]
    for i in range(len(X)):
        own = labels[i]
        a = b = None
        for c, m in zip(ids, masks):
            if c == own:
                cnt = int(m.sum()) - 1
                if cnt == 0:
                    break
                a = D[i, m].sum() / cnt
            else:
                mean = D[i, m].mean()
                b = mean if b is None else min(b, mean)
        if a is None:
            continue  # singleton cluster
        top = max(a, b)
        s[i] = (b - a) / top if top > 0 else 0.0
    return s


def silhouette_score(features: Sequence[Sequence[float]] | np.ndarray, labels: Sequence[int]) -> float:
    return float(silhouette_samples(features, labels).mean())


@dataclass(frozen=True)
class SilhouetteReport:
    k_min: int
    k_max: int
    scores: Mapping[int, float]
    chosen_k: int
    labels: np.ndarray = field(compare=False)
    sample_scores: np.ndarray = field(compare=False)


def select_k(
    features: Sequence[Sequence[float]] | np.ndarray, k_min: int = 3, k_max: int = 25
) -> SilhouetteReport:
    """Scan k over [k_min, min(k_max, n - 1)] and keep the best mean silhouette.

    One agglomeration pass serves every k, since Ward merging is nested.
    """
    X = _check_features(features)
    n = len(X)
    if k_min < 2:
        raise ClusteringError("k_min must be >= 2")
    if n <= k_min:
        raise ClusteringError(f"need more than k_min={k_min} samples, got {n}")
    hi = min(k_max, n - 1)
    if hi < k_min:
        raise ClusteringError(f"empty k range [{k_min}, {hi}]")
    agg = _Agglomerator(X)
    for _ in range(n - hi):
        agg.step()
    partitions = {}
    for k in range(hi, k_min - 1, -1):
        partitions[k] = agg.labels()
        if k > k_min:
            agg.step()
    scores = {k: silhouette_score(X, partitions[k]) for k in range(k_min, hi + 1)}
    best = max(scores.values())
    chosen = min(k for k, v in scores.items() if v == best)
    labels = partitions[chosen]
    return SilhouetteReport(k_min, hi, scores, chosen, labels, silhouette_samples(X, labels))


def cluster_report_json(report: SilhouetteReport, image_ids: Sequence[str], feature_hash: str) -> str:
    doc = {
        "feature_config_hash": feature_hash,
        "k_min": report.k_min,
        "k_max": report.k_max,
        "scores": {str(k): v for k, v in sorted(report.scores.items())},
        "chosen_k": report.chosen_k,
        "labels": {i: int(c) for i, c in zip(image_ids, report.labels)},
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


@dataclass(frozen=True)
class AblationSet:
    cluster: int
    manifest: DatasetManifest
    excluded: int
    fraction: float


def ablation_manifests(manifest: DatasetManifest, assignment: ClusterAssignment) -> list[AblationSet]:
    """One manifest per cluster, with that cluster's images dropped from train."""
    train_ids = {s.image_id for s in manifest.split("train")}
    if set(assignment.labels) != train_ids:
        raise ClusteringError(
            "assignment/manifest mismatch: cluster labels must cover exactly the train split "
            f"({len(assignment.labels)} labelled, {len(train_ids)} train images)"
        )
    out = []
    for j in range(assignment.k):
        drop = set(assignment.members(j))
        kept = [s for s in manifest.samples if s.image_id not in drop]
        m = manifest.with_samples(kept, name=f"{manifest.name}-excl-{j}")
        out.append(AblationSet(j, m, len(drop), len(drop) / len(train_ids)))
    return out
