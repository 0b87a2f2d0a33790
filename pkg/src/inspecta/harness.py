"""Experiment runner: train on one split, score another, persist reports; plus the
experiment matrix and the cluster-exclusion ablation."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import cluster, learner
from .dataset import SPLITS, DatasetManifest, Sample, dumps_manifest, load_manifest, write_atomic
from .metrics import ScoredLabel, average_precision, dumps_predictions, evaluate_scored, write_roc_csv
from .syngen import config_hash

log = logging.getLogger(__name__)

SUMMARY_HEADER = ["experiment", "kind", "train", "test", "auc", "ap", "tp", "fn", "fp", "tn"]


class ConfigError(ValueError):
    """Bad experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class DatasetRef:
    manifest: str
    split: str

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ConfigError(f"unknown split {self.split!r} in dataset reference")

    @classmethod
    def parse(cls, text: str, default_split: str = "train") -> DatasetRef:
        path, sep, split = text.rpartition(":")
        if not sep or split not in SPLITS:
            return cls(text, default_split)
        return cls(path, split)

    def __str__(self) -> str:
        return f"{self.manifest}:{self.split}"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    model_kind: str
    train: DatasetRef
    test: DatasetRef
    aggregation: str = "max_box"
    seed: int = 0
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    # detector image scores: detections at or above this score feed the aggregation
    score_threshold: float = 0.0
    decision_threshold: float = 0.5
    ap_iou_threshold: float = 0.1

    def __post_init__(self) -> None:
        if self.model_kind not in learner.KINDS:
            raise ConfigError(f"model_kind must be one of {learner.KINDS}, got {self.model_kind!r}")
        if self.aggregation not in learner.AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {learner.AGGREGATIONS}")
        self.train_config()  # validates hyperparameter names

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["train"] = asdict(self.train)
        d["test"] = asdict(self.test)
        d["hyperparameters"] = dict(self.hyperparameters)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ExperimentConfig:
        d = dict(d)
        try:
            for key in ("train", "test"):
                v = d[key]
                d[key] = DatasetRef.parse(v, "train" if key == "train" else "validation") if isinstance(v, str) else DatasetRef(**v)
            d["experiment_id"] = str(d["experiment_id"])
            return cls(**d)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from None

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def train_config(self) -> learner.TrainConfig:
        return train_config(self.model_kind, self.seed, self.hyperparameters)


def train_config(kind: str, seed: int, hyperparameters: Mapping[str, Any] | None = None) -> learner.TrainConfig:
    """Kind defaults with overrides; ``hyperparameters["extractor"]`` patches the feature layout."""
    hp = dict(hyperparameters or {})
    ext_over = hp.pop("extractor", {})
    if kind not in learner.KINDS:
        raise ConfigError(f"model kind must be one of {learner.KINDS}, got {kind!r}")
    base = learner.classifier_config() if kind == "classifier" else learner.detector_config()
    known = set(learner.TrainConfig.__dataclass_fields__)
    unknown = set(hp) - known
    if unknown:
        raise ConfigError(f"unknown hyperparameters {sorted(unknown)}")
    try:
        ext = replace(base.extractor, **ext_over)
    except TypeError as exc:
        raise ConfigError(f"unknown extractor setting: {exc}") from None
    return replace(base, **hp, extractor=ext, seed=seed)


# -- caches shared by the experiments of one run -------------------------------------------


class Workspace:
    """Memoizes manifests, images, trained models and detector window features.

    Safe to share between worker threads: each model is trained once even when
    several experiments ask for it concurrently.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._manifests: dict[str, DatasetManifest] = {}
        self._images: dict[tuple[str, str], np.ndarray] = {}
        self._models: dict[Any, learner.ModelParams] = {}
        self._model_locks: dict[Any, threading.Lock] = {}
        self.window_blocks: dict[Any, Any] = {}

    def manifest(self, path: str) -> DatasetManifest:
        with self._lock:
            if path not in self._manifests:
                self._manifests[path] = load_manifest(path)
            return self._manifests[path]

    def image(self, m: DatasetManifest, s: Sample) -> np.ndarray:
        key = (str(m.image_file(s)), s.image_id)
        with self._lock:
            im = self._images.get(key)
        if im is None:
            im = m.load_image(s)
            with self._lock:
                self._images[key] = im
        return im

    def model(self, key: Any, build) -> learner.ModelParams:
        with self._lock:
            lock = self._model_locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._models:
                self._models[key] = build()
            return self._models[key]


def fit_model(kind: str, samples: Sequence[Sample], images: Sequence[np.ndarray],
              config: learner.TrainConfig, ws: Workspace | None = None) -> learner.ModelParams:
    if kind == "classifier":
        return learner.train_classifier(samples, images, config)
    cache = ws.window_blocks if ws is not None else None
    return learner.train_detector(samples, images, config, cache=cache)


def train_on(ref: DatasetRef, kind: str, seed: int = 0,
             hyperparameters: Mapping[str, Any] | None = None) -> learner.ModelParams:
    """Train a model on one split of a manifest on disk."""
    if not Path(ref.manifest).is_file():
        raise ConfigError(f"dataset manifest not found: {ref.manifest}")
    tc = train_config(kind, seed, hyperparameters)
    m = load_manifest(ref.manifest)
    samples = _split_or_fail(m, ref.split, "train")
    return fit_model(kind, samples, [m.load_image(s) for s in samples], tc)


# -- single experiment ----------------------------------------------------------------------


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    train_name: str
    test_name: str
    scores: list[ScoredLabel]
    auc: float
    ap: float | None
    confusion: dict[str, Any]
    roc_points: list[tuple[float, float]]
    model_id: str
    wall_time: float = 0.0
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        # wall time is kept out of the document so reruns are byte-identical
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "seed": self.config.seed,
            "train_dataset": self.train_name,
            "test_dataset": self.test_name,
            "model_id": self.model_id,
            "auc": self.auc,
            "ap": self.ap,
            "confusion": self.confusion,
            "roc_points": [list(p) for p in self.roc_points],
            "scores": [s.to_dict() for s in self.scores],
            "metadata": self.metadata,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def load_report(path: str | Path) -> dict[str, Any]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("auc", "scores"):
        if key not in doc:
            raise ValueError(f"{path}: report missing {key!r}")
    return doc


def model_id(params: learner.ModelParams) -> str:
    return hashlib.sha256(learner.dumps_model(params)).hexdigest()[:16]


def _split_or_fail(m: DatasetManifest, split: str, where: str) -> list[Sample]:
    samples = m.split(split)
    if not samples:
        raise ConfigError(f"{where}: dataset {m.name!r} has no {split!r} samples")
    return samples


def evaluate_model(
    params: learner.ModelParams,
    config: ExperimentConfig,
    test: DatasetManifest,
    ws: Workspace,
) -> tuple[list[ScoredLabel], list[dict[str, Any]], float | None]:
    """Score every test image; also return prediction records and (detectors) AP."""
    samples = _split_or_fail(test, config.test.split, "test")
    det_cfg = learner.DetectConfig(score_threshold=config.score_threshold)
    scored, records, dets, gts = [], [], [], []
    for s in samples:
        im = ws.image(test, s)
        if params.kind == "detector":
            found = learner.detect(params, im, det_cfg)
            score = learner.aggregate(found, config.aggregation)
            dets.append(found)
            gts.append(list(s.gt_boxes))
        else:
            found = []
            score = learner.image_score(params, im)
        scored.append(ScoredLabel(s.image_id, score, s.label))
        records.append({"image_id": s.image_id, "score": score, "detections": found})
    ap = None
    if params.kind == "detector" and any(gts):
        ap = average_precision(dets, gts, config.ap_iou_threshold)
    return scored, records, ap


def _execute(
    config: ExperimentConfig,
    train_m: DatasetManifest,
    test_m: DatasetManifest,
    out_dir: Path | None,
    ws: Workspace,
    metadata: Mapping[str, Any] | None = None,
) -> ExperimentReport:
    t0 = time.perf_counter()
    tc = config.train_config()
    train_samples = _split_or_fail(train_m, config.train.split, "train")
    key = (config.model_kind, train_m.name, train_m.generator_config_hash, config.train.split,
           tuple(s.image_id for s in train_samples), tc.hash())

    def build() -> learner.ModelParams:
        log.info("training %s on %s:%s (%d images)", config.model_kind, train_m.name,
                 config.train.split, len(train_samples))
        images = [ws.image(train_m, s) for s in train_samples]
        return fit_model(config.model_kind, train_samples, images, tc, ws)

    try:
        params = ws.model(key, build)
    except learner.TrainingError as exc:
        raise learner.TrainingError(f"experiment {config.experiment_id}: {exc}") from exc
    scored, records, ap = evaluate_model(params, config, test_m, ws)
    summary = evaluate_scored(scored, config.decision_threshold)
    report = ExperimentReport(
        config=config,
        train_name=f"{train_m.name}:{config.train.split}",
        test_name=f"{test_m.name}:{config.test.split}",
        scores=scored,
        auc=summary.auc,
        ap=ap,
        confusion={**summary.confusion.to_dict(), "threshold": summary.threshold},
        roc_points=summary.roc.points,
        model_id=model_id(params),
        metadata=dict(metadata or {}),
    )
    report.wall_time = time.perf_counter() - t0
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_atomic(out_dir / "report.json", report.dumps().encode("utf-8"))
        write_roc_csv(summary.roc, out_dir / "roc.csv")
        write_atomic(out_dir / "predictions.json",
                     dumps_predictions(report.model_id, config.aggregation, records).encode("utf-8"))
        write_atomic(out_dir / "timing.json",
                     (json.dumps({"wall_time_s": round(report.wall_time, 3)}) + "\n").encode("utf-8"))
    return report


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path | None = None, workspace: Workspace | None = None
) -> ExperimentReport:
    ws = workspace or Workspace()
    for ref in (config.train, config.test):
        if not Path(ref.manifest).is_file():
            raise ConfigError(f"dataset manifest not found: {ref.manifest}")
    train_m = ws.manifest(config.train.manifest)
    test_m = ws.manifest(config.test.manifest)
    return _execute(config, train_m, test_m, Path(out_dir) if out_dir else None, ws)


# -- experiment matrix ----------------------------------------------------------------------


def default_matrix(uniform: str, diverse: str, seed: int = 42, **shared: Any) -> list[ExperimentConfig]:
    """Experiments 1, 2, 4, 5, 6, 7 for both model kinds.

    1/2: uniform -> own validation / holdout; 4: uniform -> diverse holdout;
    5/6: diverse -> own validation / holdout; 7: diverse -> uniform holdout.
    """
    rows = [
        ("1", uniform, uniform, "validation"),
        ("2", uniform, uniform, "holdout"),
        ("4", uniform, diverse, "holdout"),
        ("5", diverse, diverse, "validation"),
        ("6", diverse, diverse, "holdout"),
        ("7", diverse, uniform, "holdout"),
    ]
    out = []
    for kind in learner.KINDS:
        for num, tr, te, split in rows:
            out.append(ExperimentConfig(num, kind, DatasetRef(tr, "train"), DatasetRef(te, split),
                                        seed=seed, **shared))
    return out


def load_matrix_config(path: str | Path) -> list[ExperimentConfig]:
    """Read a matrix file.

    Either ``{"experiments": [...]}`` listing experiment configs, or
    ``{"uniform": manifest, "diverse": manifest, "seed": n}`` for the default
    matrix. Relative manifest paths resolve from the config file's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read matrix config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("matrix config must be a JSON object")

    def resolve(p: str) -> str:
        q = Path(p)
        return str(q if q.is_absolute() else path.parent / q)

    if "experiments" in doc:
        configs = []
        for e in doc["experiments"]:
            e = dict(e)
            for key in ("train", "test"):
                ref = e.get(key)
                if isinstance(ref, str):
                    r = DatasetRef.parse(ref, "train" if key == "train" else "validation")
                    e[key] = {"manifest": resolve(r.manifest), "split": r.split}
                elif isinstance(ref, dict) and "manifest" in ref:
                    e[key] = {**ref, "manifest": resolve(ref["manifest"])}
            configs.append(ExperimentConfig.from_dict(e))
        return configs
    if "uniform" in doc and "diverse" in doc:
        extra = {k: doc[k] for k in ("aggregation", "score_threshold", "ap_iou_threshold") if k in doc}
        return default_matrix(resolve(doc["uniform"]), resolve(doc["diverse"]), int(doc.get("seed", 42)), **extra)
    raise ConfigError("matrix config needs 'experiments' or both 'uniform' and 'diverse'")


def thread_count(default: int = 1) -> int:
    raw = os.environ.get("INSPECTA_THREADS")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"INSPECTA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("INSPECTA_THREADS must be >= 1")
    return n


@dataclass
class MatrixResult:
    rows: list[dict[str, Any]]
    reports: list[ExperimentReport | None]

    @property
    def failed(self) -> bool:
        return any(r is None for r in self.reports)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, SUMMARY_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()


def _run_dir(config: ExperimentConfig) -> str:
    return f"exp{config.experiment_id}-{config.model_kind}"


def run_matrix(
    configs: Sequence[ExperimentConfig],
    out_dir: str | Path,
    threads: int | None = None,
    workspace: Workspace | None = None,
) -> MatrixResult:
    """Run every experiment; failures are logged and marked, the rest still run."""
    out_dir = Path(out_dir)
    ws = workspace or Workspace()
    threads = threads or thread_count()
    dirs = [_run_dir(c) for c in configs]
    if len(set(dirs)) != len(dirs):
        raise ConfigError("experiment ids must be unique per model kind")

    def one(c: ExperimentConfig) -> ExperimentReport | None:
        try:
            return run_experiment(c, out_dir / _run_dir(c), ws)
        except Exception as exc:  # noqa: BLE001 - a failed row must not stop the matrix
            log.error("experiment %s (%s) failed: %s", c.experiment_id, c.model_kind, exc)
            return None

    if threads > 1 and len(configs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(one, configs))
    else:
        reports = [one(c) for c in configs]
    rows = []
    for c, r in zip(configs, reports):
        row = {"experiment": c.experiment_id, "kind": c.model_kind,
               "train": str(r.train_name if r else c.train), "test": str(r.test_name if r else c.test)}
        if r is None:
            row.update({k: "FAILED" if k == "auc" else "" for k in SUMMARY_HEADER[4:]})
        else:
            cm = r.confusion
            row.update({"auc": f"{r.auc:.6f}", "ap": "" if r.ap is None else f"{r.ap:.6f}",
                        "tp": cm["tp"], "fn": cm["fn"], "fp": cm["fp"], "tn": cm["tn"]})
        rows.append(row)
    result = MatrixResult(rows, reports)
    write_atomic(out_dir / "summary.csv", result.summary_csv().encode("utf-8"))
    return result


# -- cluster-exclusion ablation -------------------------------------------------------------


@dataclass
class AblationReport:
    baseline: ExperimentReport
    runs: list[tuple[cluster.AblationSet, ExperimentReport]]
    silhouette: cluster.SilhouetteReport

    def to_dict(self) -> dict[str, Any]:
        base = self.baseline.auc
        return {
            "train_dataset": self.baseline.train_name,
            "test_dataset": self.baseline.test_name,
            "model_kind": self.baseline.config.model_kind,
            "seed": self.baseline.config.seed,
            "k": self.silhouette.chosen_k,
            "baseline": {"auc": base, "model_id": self.baseline.model_id, "excluded": 0},
            "clusters": [
                {"cluster": a.cluster, "manifest": a.manifest.name, "excluded": a.excluded,
                 "fraction": a.fraction, "auc": r.auc, "delta_auc": r.auc - base,
                 "model_id": r.model_id}
                for a, r in self.runs
            ],
            # the clustered pool is the train split, not the train+validation pool
            "metadata": {"clustered_pool": "train split",
                         "n_clustered": int(len(self.silhouette.labels))},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def largest(self) -> tuple[cluster.AblationSet, ExperimentReport]:
        return max(self.runs, key=lambda t: (t[0].excluded, -t[0].cluster))

    def smallest(self) -> tuple[cluster.AblationSet, ExperimentReport]:
        return min(self.runs, key=lambda t: (t[0].excluded, t[0].cluster))


def _rebased(m: DatasetManifest, target_dir: Path) -> DatasetManifest:
    """Same manifest with image paths made relative to ``target_dir``."""
    root = (m.root or Path(".")).resolve()
    samples = [replace(s, image_path=os.path.relpath(root / s.image_path, target_dir.resolve()))
               for s in m.samples]
    return replace(m.with_samples(samples), root=target_dir)


def run_ablation(
    manifest_path: str | Path,
    model_kind: str,
    test: DatasetRef,
    seed: int = 0,
    out_dir: str | Path | None = None,
    hyperparameters: Mapping[str, Any] | None = None,
    k_min: int = 3,
    k_max: int = 25,
    workspace: Workspace | None = None,
    **experiment_opts: Any,
) -> AblationReport:
    """Cluster the train split, then retrain once per excluded cluster plus a full baseline."""
    ws = workspace or Workspace()
    manifest_path = str(manifest_path)
    if not Path(manifest_path).is_file():
        raise ConfigError(f"dataset manifest not found: {manifest_path}")
    m = ws.manifest(manifest_path)
    test_m = ws.manifest(test.manifest)
    train = m.split("train")
    if len(train) < 2 * k_min:
        raise ConfigError(f"ablation needs at least {2 * k_min} train images, found {len(train)}")
    feats = np.stack([cluster.curation_features(ws.image(m, s)) for s in train])
    sil = cluster.select_k(feats, k_min, k_max)
    ids = [s.image_id for s in train]
    fhash = cluster.curation_config_hash()
    assignment = cluster.ClusterAssignment(sil.chosen_k, {i: int(c) for i, c in zip(ids, sil.labels)}, fhash)
    sets = cluster.ablation_manifests(m, assignment)
    out = Path(out_dir) if out_dir is not None else None

    def cfg(eid: str) -> ExperimentConfig:
        return ExperimentConfig(eid, model_kind, DatasetRef(manifest_path, "train"), test, seed=seed,
                                hyperparameters=dict(hyperparameters or {}), **experiment_opts)

    baseline = _execute(cfg("0"), m, test_m, out / "baseline" if out else None, ws)
    runs = []
    for a in sets:
        sub = out / f"excl-{a.cluster}" if out else None
        meta = {"excluded_cluster": a.cluster, "excluded": a.excluded, "fraction": a.fraction}
        r = _execute(cfg(str(a.cluster + 1)), a.manifest, test_m, sub, ws, meta)
        runs.append((a, r))
        if out is not None:
            mdir = out / "manifests"
            write_atomic(mdir / f"{a.manifest.name}.json",
                         dumps_manifest(_rebased(a.manifest, mdir)).encode("utf-8"))
    report = AblationReport(baseline, runs, sil)
    if out is not None:
        write_atomic(out / "clusters.json", cluster.cluster_report_json(sil, ids, fhash).encode("utf-8"))
        write_atomic(out / "ablation.json", report.dumps().encode("utf-8"))
    return report


# -- standalone evaluation of a saved model -------------------------------------------------


def evaluate_saved_model(
    params: learner.ModelParams,
    test: DatasetRef,
    out_path: str | Path,
    aggregation: str = "max_box",
    score_threshold: float = 0.0,
    decision_threshold: float = 0.5,
    ap_iou_threshold: float = 0.1,
) -> dict[str, Any]:
    """Score a split with an already trained model.

    Writes the report to ``out_path`` and, next to it, ``<stem>.roc.csv`` and
    ``<stem>.predictions.json``.
    """
    if not Path(test.manifest).is_file():
        raise ConfigError(f"dataset manifest not found: {test.manifest}")
    ws = Workspace()
    test_m = ws.manifest(test.manifest)
    probe = ExperimentConfig("eval", params.kind, test, test, aggregation=aggregation,
                             score_threshold=score_threshold, decision_threshold=decision_threshold,
                             ap_iou_threshold=ap_iou_threshold)
    scored, records, ap = evaluate_model(params, probe, test_m, ws)
    summary = evaluate_scored(scored, decision_threshold)
    mid = model_id(params)
    doc = {
        "model_id": mid,
        "model_kind": params.kind,
        "training_config_hash": params.training_config_hash,
        "test_dataset": f"{test_m.name}:{test.split}",
        "aggregation": aggregation,
        "score_threshold": score_threshold,
        "ap_iou_threshold": ap_iou_threshold,
        "auc": summary.auc,
        "ap": ap,
        "confusion": {**summary.confusion.to_dict(), "threshold": decision_threshold},
        "roc_points": [list(p) for p in summary.roc.points],
        "scores": [s.to_dict() for s in scored],
    }
    out_path = Path(out_path)
    write_atomic(out_path, (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode("utf-8"))
    stem = out_path.with_suffix("")
    write_roc_csv(summary.roc, stem.with_name(stem.name + ".roc.csv"))
    write_atomic(stem.with_name(stem.name + ".predictions.json"),
                 dumps_predictions(mid, aggregation, records).encode("utf-8"))
    return doc


def report_curve(doc: Mapping[str, Any]):
    """ROC curve rebuilt from a report's own per-image scores."""
    from .metrics import roc_curve

    return roc_curve([ScoredLabel.from_dict(s) for s in doc["scores"]])
