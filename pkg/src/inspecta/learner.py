"""Linear scorers over fixed features: a whole-image classifier and a sliding-window detector."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, MutableMapping, Sequence

import numpy as np

from .dataset import BBox, Label, write_atomic
from .features import (
    ExtractorConfig,
    expand,
    extract_features,
    fit_normalization,
    normalize_blocks,
    raw_blocks,
    raw_window_blocks,
    window_boxes,
)
from .metrics import Detection, iou

FORMAT_VERSION = 1
MAGIC = b"INSP"
P_CLAMP = 1e-12
KINDS = ("classifier", "detector")


class TrainingError(ValueError):
    pass


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True)
class FocalLossParams:
    alpha: float = 0.25  # weight of the positive class; negatives get 1 - alpha
    gamma: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0 or self.gamma < 0.0:
            raise ValueError("focal loss needs alpha in [0, 1] and gamma >= 0")


@dataclass(frozen=True)
class ModelParams:
    kind: str
    weights: np.ndarray
    bias: float
    extractor: ExtractorConfig
    training_config_hash: str = ""
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.extractor.length,):
            raise ValueError(f"weight length {w.shape} != feature length {self.extractor.length}")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "weights", w)


# -- scoring and loss ----------------------------------------------------------------


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def sigmoid_score(params: ModelParams, features: np.ndarray) -> float:
    x = np.asarray(features, dtype=np.float64)
    if x.shape != params.weights.shape:
        raise ValueError(f"feature length {x.shape} != weight length {params.weights.shape}")
    return float(sigmoid(float(x @ params.weights) + params.bias))


def focal_loss(p, y, params: FocalLossParams):
    """-alpha_t (1 - p_t)^gamma log(p_t), with p_t = p for y = 1 else 1 - p."""
    p = np.clip(np.asarray(p, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)
    y = np.asarray(y)
    pt = np.where(y == 1, p, 1.0 - p)
    at = np.where(y == 1, params.alpha, 1.0 - params.alpha)
    loss = -at * (1.0 - pt) ** params.gamma * np.log(pt)
    return loss if loss.ndim else float(loss)


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def focal_loss_grad(logit, y, params: FocalLossParams):
    """d focal_loss(sigmoid(logit), y) / d logit."""
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(y)
    g = params.gamma
    p = sigmoid(z)
    q = sigmoid(-z)
    pos = params.alpha * q**g * (g * p * _log_sigmoid(z) - q)
    neg = (1.0 - params.alpha) * p**g * (p - g * q * _log_sigmoid(-z))
    out = np.where(y == 1, pos, neg)
    return out if out.ndim else float(out)


# -- training ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.05
    batch_size: int = 16
    alpha: float = 0.5
    gamma: float = 0.0
    l2: float = 1e-3
    seed: int = 0
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    # detector only
    window: int = 16
    stride: int = 8
    pos_threshold: float = 0.3
    neg_threshold: float = 0.1
    # extra noisy/relit copy of each training image per unit
    augment_copies: int = 0
    aug_noise_min: float = 2.0
    aug_noise_max: float = 8.0
    aug_bias: float = 15.0
    aug_translate: int = 4

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d["extractor"] = self.extractor.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrainConfig:
        d = dict(d)
        if "extractor" in d:
            d["extractor"] = ExtractorConfig.from_dict(d["extractor"])
        return cls(**d)

    def hash(self) -> str:
        from .syngen import config_hash

        return config_hash(self.to_dict())


def classifier_config(**overrides: Any) -> TrainConfig:
    return replace(TrainConfig(), **overrides)


def detector_config(**overrides: Any) -> TrainConfig:
    base = TrainConfig(
        epochs=300, learning_rate=0.01, batch_size=128, alpha=0.25, gamma=2.0, augment_copies=1,
        extractor=ExtractorConfig(pool_grid=4, hist_grid=4, signed=False, smooth_sigma=1.0, local_contrast=True,
                                  expand=512, window=16, stride=8),
    )
    return replace(base, **overrides)


@dataclass
class TrainResult:
    weights: np.ndarray
    bias: float
    final_loss: float


def fit_linear(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    transform: Callable[[np.ndarray], np.ndarray] | None = None,
) -> TrainResult:
    """Mini-batch gradient descent on mean focal loss; the shuffle schedule comes from the seed.

    Rows of ``X`` go through ``transform`` (the fixed expansion, if any) and
    each column is standardized before descent. The standardization is folded
    back afterwards, so the returned weights apply to the untransformed scale.
    The L2 penalty acts on the standardized weights.
    """
    y = np.asarray(y, dtype=np.int64)
    tf = transform or (lambda a: a)
    n = len(X)
    chunks = [tf(np.asarray(X[i : i + 4096], dtype=np.float64)) for i in range(0, n, 4096)]
    Z = np.concatenate(chunks).astype(np.float32)
    del chunks
    mu = Z.mean(axis=0, dtype=np.float64)
    sd = Z.std(axis=0, dtype=np.float64)
    sd[sd < 1e-9] = 1.0
    Z -= mu.astype(np.float32)
    Z /= sd.astype(np.float32)
    fl = FocalLossParams(config.alpha, config.gamma)
    # single precision in the inner loop; per-example gradients stay in double
    w = np.zeros(Z.shape[1], dtype=np.float32)
    b = 0.0
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    bs = max(1, min(config.batch_size, n))
    lr, l2 = np.float32(config.learning_rate), np.float32(config.l2)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            zb = Z[idx]
            g = focal_loss_grad((zb @ w).astype(np.float64) + b, y[idx], fl)
            w -= lr * (zb.T @ g.astype(np.float32) / np.float32(len(idx)) + l2 * w)
            b -= float(lr) * float(g.mean())
    w64 = w.astype(np.float64)
    final = float(np.mean(focal_loss(sigmoid((Z @ w).astype(np.float64) + b), y, fl)))
    return TrainResult(w64 / sd, b - float(w64 @ (mu / sd)), final)


def _labels(samples: Sequence[Any]) -> np.ndarray:
    return np.array([1 if s.label == Label.NG else 0 for s in samples])


_AUG_STREAM = 11


def augmented_copy(
    image: np.ndarray, boxes: Sequence[BBox], image_id: str, copy: int, config: TrainConfig
) -> tuple[np.ndarray, list[BBox]]:
    """Copy ``copy`` (1-based) of a training image: random shift, quarter turn and
    mirror, brightness offset, then added noise.

    The draw depends on the image id rather than its position, so a given
    image gets the same copies in every training subset.
    """
    from .syngen import AugmentOp, augment, sample_rng, translate

    rng = sample_rng(config.seed, _AUG_STREAM, zlib.crc32(f"{image_id}/{copy}".encode()))
    k = int(rng.integers(4))
    mirror = bool(rng.integers(2))
    sigma = float(rng.uniform(config.aug_noise_min, config.aug_noise_max))
    bias = float(rng.uniform(-config.aug_bias, config.aug_bias))
    t = config.aug_translate
    dx, dy = (int(v) for v in rng.integers(-t, t + 1, size=2))
    im, bx = translate(image, boxes, dx, dy)
    im, bx = augment(im, bx, AugmentOp("rotate90k", k=k))
    if mirror:
        im, bx = augment(im, bx, AugmentOp("flip_h"))
    im, bx = augment(im, bx, AugmentOp("illumination", bias=bias))
    return augment(im, bx, AugmentOp("gaussian_noise", sigma=sigma), int(rng.integers(2**63)))


def _training_views(samples: Sequence[Any], images: Sequence[np.ndarray], config: TrainConfig):
    """(sample, copy index, image) for originals then augmented copies."""
    if len(samples) != len(images):
        raise TrainingError("samples and images differ in length")
    for s, im in zip(samples, images):
        yield s, 0, im
    for c in range(1, config.augment_copies + 1):
        for s, im in zip(samples, images):
            im2, boxes = augmented_copy(im, s.gt_boxes, s.image_id, c, config)
            yield replace(s, gt_boxes=tuple(boxes)), c, im2


def train_classifier(
    samples: Sequence[Any], images: Sequence[np.ndarray], config: TrainConfig | None = None
) -> ModelParams:
    """Fit the whole-image classifier. ``images[i]`` is the pixel array of ``samples[i]``."""
    config = config or classifier_config()
    y = _labels(samples)
    if len(y) < 2 or y.min() == y.max():
        raise TrainingError("classifier training needs both OK and NG samples")
    ext = replace(config.extractor, window=0, stride=0)
    views = list(_training_views(samples, images, config))
    blocks = [raw_blocks(im, ext) for _, _, im in views]
    ext = fit_normalization(blocks, ext)
    X = np.stack([normalize_blocks(p, g, replace(ext, expand=0)) for p, g in blocks])
    y = _labels([s for s, _, _ in views])
    res = fit_linear(X, y, config, lambda a: expand(a, ext))
    return ModelParams("classifier", res.weights, res.bias, ext, config.hash())


def coverage(windows: np.ndarray, box: BBox) -> np.ndarray:
    """Fraction of ``box`` covered by each window row (x_min, y_min, x_max, y_max)."""
    iw = np.minimum(windows[:, 2], box.x_max) - np.maximum(windows[:, 0], box.x_min)
    ih = np.minimum(windows[:, 3], box.y_max) - np.maximum(windows[:, 1], box.y_min)
    return np.clip(iw, 0, None) * np.clip(ih, 0, None) / box.area


def window_labels(windows: np.ndarray, gt_boxes: Sequence[BBox], pos: float, neg: float) -> np.ndarray:
    """+1 positive, 0 negative, -1 ignored, by best ground-truth coverage per window."""
    best = np.zeros(len(windows))
    for b in gt_boxes:
        best = np.maximum(best, coverage(windows, b))
    lab = np.full(len(windows), -1, dtype=np.int64)
    lab[best >= pos] = 1
    lab[best <= neg] = 0
    return lab


def detector_extractor(config: TrainConfig) -> ExtractorConfig:
    return replace(config.extractor, window=config.window, stride=config.stride)


def build_window_set(
    samples: Sequence[Any],
    blocks: Sequence[tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    """Per-image (pooled, grads, labels) restricted to labelled windows."""
    ext = detector_extractor(config)
    boxes = window_boxes(ext)
    out_p, out_g, out_y = [], [], []
    for s, (p, g) in zip(samples, blocks):
        lab = window_labels(boxes, s.gt_boxes, config.pos_threshold, config.neg_threshold)
        keep = lab >= 0
        out_p.append(p[keep])
        out_g.append(g[keep])
        out_y.append(lab[keep])
    return out_p, out_g, out_y


def train_detector(
    samples: Sequence[Any],
    images: Sequence[np.ndarray],
    config: TrainConfig | None = None,
    *,
    cache: MutableMapping[Any, tuple[np.ndarray, np.ndarray]] | None = None,
) -> ModelParams:
    """Fit the window scorer with focal loss.

    ``cache`` (any dict) keeps raw window blocks per (image id, copy, layout)
    so repeated trainings on overlapping image sets skip feature extraction.
    """
    config = config or detector_config()
    if not any(s.gt_boxes for s in samples):
        raise TrainingError("detector training needs at least one NG sample")
    ext = detector_extractor(config)
    cache = {} if cache is None else cache
    view_samples, blocks = [], []
    for s, c, im in _training_views(samples, images, config):
        key = (s.image_id, c, config.seed if c else 0, json.dumps(ext.to_dict(), sort_keys=True))
        if key not in cache:
            cache[key] = raw_window_blocks(im, ext)
        view_samples.append(s)
        blocks.append(cache[key])
    wp, wg, wy = build_window_set(view_samples, blocks, config)
    y = np.concatenate(wy)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise TrainingError(
            f"no positive windows: coverage threshold {config.pos_threshold} with window "
            f"{config.window}/stride {config.stride} over {sum(len(s.gt_boxes) for s in samples)} boxes"
        )
    ext = fit_normalization(zip(wp, wg), ext)
    X = normalize_blocks(np.concatenate(wp), np.concatenate(wg), replace(ext, expand=0))
    res = fit_linear(X, y, config, lambda a: expand(a, ext))
    return ModelParams("detector", res.weights, res.bias, ext, config.hash())


# -- inference -----------------------------------------------------------------------


@dataclass(frozen=True)
class DetectConfig:
    score_threshold: float = 0.5
    nms_iou: float = 0.5


def nms(detections: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy non-maximum suppression; ties keep the earlier detection."""
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    kept: list[Detection] = []
    for i in order:
        d = detections[i]
        if all(iou(d.box, k.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def window_scores(params: ModelParams, image: np.ndarray) -> np.ndarray:
    ext = params.extractor
    X = normalize_blocks(*raw_window_blocks(image, ext), ext)
    return sigmoid(X @ params.weights + params.bias)


def detect(params: ModelParams, image: np.ndarray, config: DetectConfig | None = None) -> list[Detection]:
    if params.kind != "detector":
        raise ValueError("detect() needs detector parameters")
    config = config or DetectConfig()
    scores = window_scores(params, image)
    boxes = window_boxes(params.extractor)
    cand = [
        Detection(BBox(*(int(v) for v in boxes[i])), float(scores[i]))
        for i in np.flatnonzero(scores >= config.score_threshold)
    ]
    return nms(cand, config.nms_iou)


AGGREGATIONS = ("max_box", "min_box")


def aggregate(detections: Sequence[Detection], aggregation: str = "max_box") -> float:
    """Image NG score from box scores; no boxes means no defect evidence (0.0)."""
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    if not detections:
        return 0.0
    scores = [d.score for d in detections]
    return max(scores) if aggregation == "max_box" else min(scores)


def image_score(
    params: ModelParams,
    image: np.ndarray,
    aggregation: str = "max_box",
    config: DetectConfig | None = None,
) -> float:
    if params.kind == "classifier":
        return sigmoid_score(params, extract_features(image, params.extractor))
    return aggregate(detect(params, image, config), aggregation)


# -- persistence ---------------------------------------------------------------------


def dumps_model(params: ModelParams) -> bytes:
    ext = json.dumps(params.extractor.to_dict(), sort_keys=True).encode("utf-8")
    tch = params.training_config_hash.encode("utf-8")
    body = b"".join([
        MAGIC,
        struct.pack("<IB", params.format_version, KINDS.index(params.kind)),
        struct.pack("<I", len(ext)), ext,
        struct.pack("<I", len(tch)), tch,
        struct.pack("<d", params.bias),
        struct.pack("<I", len(params.weights)),
        params.weights.astype("<f8").tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def loads_model(data: bytes) -> ModelParams:
    if len(data) < 4 + 5 + 4 or data[:4] != MAGIC:
        raise ModelFileError("corrupt model file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported version {version}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ModelFileError("corrupt model file (checksum mismatch)")
    try:
        pos = 8
        kind = KINDS[body[pos]]
        pos += 1
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        ext = ExtractorConfig.from_dict(json.loads(body[pos : pos + n]))
        pos += n
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tch = body[pos : pos + n].decode("utf-8")
        pos += n
        (bias,) = struct.unpack_from("<d", body, pos)
        pos += 8
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        if len(body) != pos + 8 * n:
            raise ModelFileError("corrupt model file (weight block size)")
        w = np.frombuffer(body, dtype="<f8", count=n, offset=pos).astype(np.float64)
        return ModelParams(kind, w, bias, ext, tch, version)
    except (struct.error, IndexError, ValueError, TypeError) as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise ModelFileError(f"corrupt model file ({exc})") from None


def save_model(params: ModelParams, path: str | Path) -> Path:
    path = Path(path)
    write_atomic(path, dumps_model(params))
    return path


def load_model(path: str | Path) -> ModelParams:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from None
    return loads_model(data)
