"""Domain types, manifest I/O and the train/validation/holdout split protocol."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

SPLITS = ("train", "validation", "holdout")
ROTATIONS = (0, 90, 180, 270)


class ManifestError(ValueError):
    """Raised when a manifest is missing, malformed, or violates an invariant."""


class Label(str, enum.Enum):
    OK = "OK"
    NG = "NG"


@dataclass(frozen=True, order=True)
class BBox:
    """Half-open pixel box: column c is inside iff ``x_min <= c < x_max``."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(f"degenerate box {self.as_tuple()}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def within(self, width: int, height: int) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    def to_dict(self) -> dict[str, int]:
        return {"x_min": self.x_min, "y_min": self.y_min, "x_max": self.x_max, "y_max": self.y_max}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BBox:
        return cls(int(d["x_min"]), int(d["y_min"]), int(d["x_max"]), int(d["y_max"]))


@dataclass(frozen=True)
class Sample:
    image_id: str
    image_path: str
    gt_boxes: tuple[BBox, ...] = ()
    batch_id: str = "B0"
    rotation: int = 0

    @property
    def label(self) -> Label:
        return label_of(self)

    def to_dict(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "image_path": self.image_path,
            "batch_id": self.batch_id,
            "rotation": self.rotation,
            "gt_boxes": [b.to_dict() for b in self.gt_boxes],
        }


def label_of(sample: Sample) -> Label:
    """NG iff the sample carries at least one ground-truth defect box."""
    return Label.NG if sample.gt_boxes else Label.OK


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    samples: tuple[Sample, ...]
    split_assignments: Mapping[str, str]
    generator_config_hash: str = ""
    seed: int = 0
    # where relative image paths resolve from; not serialized
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        validate_manifest(self)

    def split(self, name: str) -> list[Sample]:
        if name not in SPLITS:
            raise ManifestError(f"unknown split {name!r}")
        return [s for s in self.samples if self.split_assignments[s.image_id] == name]

    def by_id(self) -> dict[str, Sample]:
        return {s.image_id: s for s in self.samples}

    def image_file(self, sample: Sample) -> Path:
        base = self.root if self.root is not None else Path(".")
        return base / sample.image_path

    def load_image(self, sample: Sample) -> np.ndarray:
        return read_pgm(self.image_file(sample))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "generator_config_hash": self.generator_config_hash,
            "samples": [s.to_dict() for s in self.samples],
            "split_assignments": {s.image_id: self.split_assignments[s.image_id] for s in self.samples},
        }

    def with_samples(self, samples: Iterable[Sample], name: str | None = None) -> DatasetManifest:
        samples = tuple(samples)
        keep = {s.image_id for s in samples}
        return DatasetManifest(
            name=name or self.name,
            samples=samples,
            split_assignments={k: v for k, v in self.split_assignments.items() if k in keep},
            generator_config_hash=self.generator_config_hash,
            seed=self.seed,
            root=self.root,
        )


def validate_manifest(m: DatasetManifest) -> None:
    seen: set[str] = set()
    for s in m.samples:
        if s.image_id in seen:
            raise ManifestError(f"duplicate image_id {s.image_id!r}")
        seen.add(s.image_id)
        if s.rotation not in ROTATIONS:
            raise ManifestError(f"{s.image_id}: rotation {s.rotation} not in {ROTATIONS}")
        split = m.split_assignments.get(s.image_id)
        if split is None:
            raise ManifestError(f"{s.image_id}: split_assignments missing entry")
        if split not in SPLITS:
            raise ManifestError(f"{s.image_id}: split {split!r} not one of {SPLITS}")
    extra = set(m.split_assignments) - seen
    if extra:
        raise ManifestError(f"split_assignments lists unknown image_id {sorted(extra)[0]!r}")
    held = {s.batch_id for s in m.samples if m.split_assignments[s.image_id] == "holdout"}
    for s in m.samples:
        if m.split_assignments[s.image_id] != "holdout" and s.batch_id in held:
            raise ManifestError(
                f"holdout batch overlap: {s.image_id} (batch_id {s.batch_id!r}) shares a holdout batch"
            )


def _parse_sample(d: Any, where: str) -> Sample:
    if not isinstance(d, dict):
        raise ManifestError(f"{where}: sample must be an object")
    image_id = d.get("image_id", "?")
    for key in ("image_id", "image_path", "batch_id", "rotation", "gt_boxes"):
        if key not in d:
            raise ManifestError(f"{image_id}: missing field {key!r}")
    if "label" in d:
        declared = d["label"]
        implied = Label.NG.value if d["gt_boxes"] else Label.OK.value
        if declared != implied:
            raise ManifestError(f"{image_id}: label/box inconsistency (label {declared!r})")
    boxes = []
    for i, b in enumerate(d["gt_boxes"]):
        try:
            boxes.append(BBox.from_dict(b))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{image_id}: field gt_boxes[{i}] invalid ({exc})") from None
    if not isinstance(d["rotation"], int):
        raise ManifestError(f"{image_id}: field 'rotation' must be an integer")
    return Sample(
        image_id=str(d["image_id"]),
        image_path=str(d["image_path"]),
        gt_boxes=tuple(boxes),
        batch_id=str(d["batch_id"]),
        rotation=d["rotation"],
    )


def manifest_from_dict(data: Any, root: Path | None = None) -> DatasetManifest:
    if not isinstance(data, dict):
        raise ManifestError("manifest must be a JSON object")
    for key in ("name", "seed", "generator_config_hash", "samples", "split_assignments"):
        if key not in data:
            raise ManifestError(f"manifest missing field {key!r}")
    seed = data["seed"]
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ManifestError("field 'seed' must be an unsigned 64-bit integer")
    samples = tuple(_parse_sample(d, f"samples[{i}]") for i, d in enumerate(data["samples"]))
    splits = data["split_assignments"]
    if not isinstance(splits, dict):
        raise ManifestError("field 'split_assignments' must be an object")
    return DatasetManifest(
        name=str(data["name"]),
        samples=samples,
        split_assignments=dict(splits),
        generator_config_hash=str(data["generator_config_hash"]),
        seed=seed,
        root=root,
    )


def dumps_manifest(m: DatasetManifest) -> str:
    return json.dumps(m.to_dict(), indent=1, sort_keys=True) + "\n"


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from None
    return manifest_from_dict(data, root=path.parent)


def save_manifest(m: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    write_atomic(path, dumps_manifest(m).encode("utf-8"))
    return path


def split_dataset(
    samples: Iterable[Sample], validation_fraction: float = 0.25, seed: int = 0
) -> dict[str, str]:
    """Randomly assign samples to train/validation.

    The validation set has exactly ``round(validation_fraction * n)`` members and
    the assignment depends only on the seed and the order of ``samples``.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("cannot split an empty sample list")
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError(f"validation_fraction must lie in (0, 1), got {validation_fraction}")
    n = len(samples)
    n_val = int(round(validation_fraction * n))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = rng.permutation(n)
    val = set(order[:n_val].tolist())
    return {s.image_id: ("validation" if i in val else "train") for i, s in enumerate(samples)}


def write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("PGM images must be 2-D uint8 arrays")
    h, w = image.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    write_atomic(Path(path), header + image.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace; '#' comments allowed
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: maxval {maxval} unsupported (expected 255)")
    body = raw[pos : pos + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
