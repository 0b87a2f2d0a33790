"""Procedural defect datasets.

Two families are produced. ``uniform`` renders the same plate over and over,
the way a production line photographs identical parts. ``diverse`` draws a new
flat part for every physical item and photographs it in four planar rotations.
Defects are crescents: a disc of material filed off at the part's outer edge.
Holdout images come from a separate acquisition batch whose imaging conditions
differ by a :class:`BatchShift`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy import ndimage

from .dataset import BBox, DatasetManifest, Sample, save_manifest, split_dataset, write_pgm

SHAPE_KINDS = ("plate_with_holes", "ring", "disc", "rectangle", "polygon", "perforated_panel")
MARGIN = 4
PART_NOISE_SIGMA = 3.0
BACKGROUND_NOISE_SIGMA = 2.0
# holes are screw-sized: always wider than the largest file bite
HOLE_RADIUS = (8.0, 11.0)

# stream tags for counter-based seeding
_PART, _TEXTURE, _DEFECT, _SHIFT, _AUGMENT, _SELECT = range(6)


class GenerationError(ValueError):
    pass


def sample_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Generator for one (stream, index) cell of a master seed; order independent."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, index)))


def config_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class PartSpec:
    shape_kind: str
    size_px: int
    hole_pattern: tuple[tuple[tuple[float, float], float], ...] = ()
    base_intensity: int = 170
    background_intensity: int = 60
    # height/width for rectangular kinds
    aspect: float = 1.0
    sides: int = 6
    angle: float = 0.0
    # part centre relative to the image centre
    offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.shape_kind not in SHAPE_KINDS:
            raise GenerationError(f"unknown shape_kind {self.shape_kind!r}")
        if self.size_px <= 0:
            raise GenerationError(f"size_px must be positive, got {self.size_px}")
        if abs(self.base_intensity - self.background_intensity) < 40:
            raise GenerationError("part and background intensities must differ by at least 40 levels")
        for v in (self.base_intensity, self.background_intensity):
            if not 0 <= v <= 255:
                raise GenerationError(f"intensity {v} outside 0..255")


@dataclass(frozen=True)
class DefectSpec:
    diameter_px: int = 8
    bite_depth_fraction: float = 0.8
    placement: str = "random_edge"
    count: int = 1

    def __post_init__(self) -> None:
        if self.count < 1:
            raise GenerationError("count must be ≥1")
        if self.diameter_px < 3:
            raise GenerationError("diameter_px must be at least 3")
        if not 0.0 < self.bite_depth_fraction <= 1.0:
            raise GenerationError("bite_depth_fraction must lie in (0, 1]")
        if self.placement != "random_edge":
            raise GenerationError(f"unsupported placement {self.placement!r}")


@dataclass(frozen=True)
class BatchShift:
    brightness_delta: float = 12.0
    noise_sigma: float = 6.0
    blur_radius: int = 1
    translation_jitter: int = 2

    def __post_init__(self) -> None:
        # bounded so a 60-level part/background contrast keeps >= 20 levels after the shift
        if abs(self.brightness_delta) > 40 or not 0 <= self.noise_sigma <= 12:
            raise GenerationError("batch shift intensity terms out of bounds")
        if not 0 <= self.blur_radius <= 3 or not 0 <= self.translation_jitter <= MARGIN:
            raise GenerationError("batch shift geometric terms out of bounds")

    @classmethod
    def none(cls) -> BatchShift:
        return cls(0.0, 0.0, 0, 0)


AUGMENT_OPS = ("rotate90k", "flip_h", "flip_v", "gaussian_noise", "illumination")


@dataclass(frozen=True)
class AugmentOp:
    name: str
    k: int | None = None
    sigma: float = 4.0
    gain: float = 1.0
    bias: float = 0.0

    def __post_init__(self) -> None:
        if self.name not in AUGMENT_OPS:
            raise GenerationError(f"unknown augmentation {self.name!r}")


@dataclass(frozen=True)
class AugmentSpec:
    ops: tuple[AugmentOp, ...] = ()
    # probability of applying each enabled op to a train/validation image
    probability: float = 0.5


# -- rendering -----------------------------------------------------------------


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    c = np.arange(size) + 0.5 - size / 2.0
    return np.meshgrid(c, c)  # x (columns), y (rows), image centre at 0


def part_mask(spec: PartSpec, image_size: int = 128) -> np.ndarray:
    """Rasterize the silhouette (pixel centres) as a boolean mask."""
    x, y = _grid(image_size)
    x = x - spec.offset[0]
    y = y - spec.offset[1]
    half = spec.size_px / 2.0
    kind = spec.shape_kind
    if kind in ("plate_with_holes", "rectangle", "perforated_panel"):
        mask = (np.abs(x) < half) & (np.abs(y) < half * spec.aspect)
    elif kind in ("disc", "ring"):
        mask = x**2 + y**2 < half**2
    else:
        mask = np.ones_like(x, dtype=bool)
        for k in range(spec.sides):
            a = spec.angle + 2 * math.pi * (k + 0.5) / spec.sides
            # half-plane with outward normal at angle a; apothem = R cos(pi/n)
            mask &= x * math.cos(a) + y * math.sin(a) < half * math.cos(math.pi / spec.sides)
    for (hx, hy), r in spec.hole_pattern:
        mask &= (x - hx) ** 2 + (y - hy) ** 2 >= r**2
    if not mask.any():
        raise GenerationError("part silhouette is empty")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    lo = min(rows[0], cols[0])
    hi = max(rows[-1], cols[-1])
    if lo < MARGIN or hi > image_size - 1 - MARGIN:
        raise GenerationError(f"silhouette does not fit with a {MARGIN} px margin")
    return mask


def render(mask: np.ndarray, spec: PartSpec, rng: np.random.Generator) -> np.ndarray:
    """Intensities for a mask: flat part on flat background plus clipped texture noise."""
    noise = rng.standard_normal(mask.shape).clip(-3, 3)
    img = np.where(
        mask,
        spec.base_intensity + PART_NOISE_SIGMA * noise,
        spec.background_intensity + BACKGROUND_NOISE_SIGMA * noise,
    )
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def gen_part(spec: PartSpec, rng_seed: int, image_size: int = 128) -> np.ndarray:
    return render(part_mask(spec, image_size), spec, np.random.default_rng(rng_seed))


# -- defects ---------------------------------------------------------------------


def tight_box(mask: np.ndarray) -> BBox:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def _boxes_touch(a: BBox, b: BBox, gap: int = 1) -> bool:
    return not (
        a.x_max + gap <= b.x_min or b.x_max + gap <= a.x_min
        or a.y_max + gap <= b.y_min or b.y_max + gap <= a.y_min
    )


def carve_defects(
    mask: np.ndarray, spec: DefectSpec, rng: np.random.Generator, max_tries: int = 200
) -> list[np.ndarray]:
    """Choose ``spec.count`` disjoint crescent regions on the outer edge of ``mask``.

    A disc of ``diameter_px`` is placed on a random outer-boundary pixel so that
    it reaches ``bite_depth_fraction * diameter_px`` into the part along the edge
    normal; the removed region is the disc intersected with the part.
    """
    if not mask.any():
        raise GenerationError("part mask is empty")
    filled = ndimage.binary_fill_holes(mask)
    outside = ~ndimage.binary_erosion(filled, border_value=0)
    boundary = np.argwhere(mask & outside)
    if len(boundary) == 0:
        raise GenerationError("part has no outer edge")
    smooth = ndimage.gaussian_filter(filled.astype(np.float64), 2.0)
    gy, gx = np.gradient(smooth)
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    r = spec.diameter_px / 2.0
    push = r - spec.bite_depth_fraction * spec.diameter_px
    regions: list[np.ndarray] = []
    boxes: list[BBox] = []
    tries = 0
    while len(regions) < spec.count:
        if tries >= max_tries:
            raise GenerationError(
                f"no valid edge placement for defect {len(regions) + 1} after {tries} retries"
            )
        tries += 1
        py, px = boundary[rng.integers(len(boundary))]
        ny, nx = -gy[py, px], -gx[py, px]
        norm = math.hypot(nx, ny)
        if norm < 1e-9:
            continue
        cy = py + 0.5 + push * ny / norm
        cx = px + 0.5 + push * nx / norm
        disc = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 < r**2
        region = disc & mask
        for prev in regions:
            region &= ~prev
        if region.sum() < 4:
            continue
        box = tight_box(region)
        if box.area < 4 or any(_boxes_touch(box, b) for b in boxes):
            continue
        if ndimage.label(region)[1] != 1:
            continue
        regions.append(region)
        boxes.append(box)
    return regions


def apply_defect(
    image: np.ndarray,
    part_mask: np.ndarray,
    spec: DefectSpec,
    rng_seed: int,
    background_intensity: int | None = None,
) -> tuple[np.ndarray, list[BBox]]:
    """Remove crescent-shaped material; returns the new image and one box per defect."""
    if background_intensity is None:
        background_intensity = int(np.median(image[~part_mask])) if (~part_mask).any() else 0
    regions = carve_defects(part_mask, spec, np.random.default_rng(rng_seed))
    out = image.copy()
    for region in regions:
        out[region] = background_intensity
    return out, [tight_box(r) for r in regions]


# -- acquisition shift and augmentation -------------------------------------------


def _translate(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    h, w = image.shape
    p = max(abs(dx), abs(dy))
    if p == 0:
        return image.copy()
    padded = np.pad(image, p, mode="edge")
    return padded[p - dy : p - dy + h, p - dx : p - dx + w]


def translate(
    image: np.ndarray, boxes: Sequence[BBox], dx: int, dy: int
) -> tuple[np.ndarray, list[BBox]]:
    """Move content by (dx, dy) pixels, repeating edge pixels into the gap; boxes are clipped."""
    h, w = image.shape
    out_boxes = [
        BBox(max(b.x_min + dx, 0), max(b.y_min + dy, 0), min(b.x_max + dx, w), min(b.y_max + dy, h))
        for b in boxes
    ]
    return _translate(image, dx, dy), out_boxes


def apply_batch_shift(
    image: np.ndarray, boxes: Sequence[BBox], shift: BatchShift, rng: np.random.Generator
) -> tuple[np.ndarray, list[BBox]]:
    """Translate, blur, brighten and re-noise an image as a different acquisition would."""
    j = shift.translation_jitter
    dx, dy = (int(v) for v in rng.integers(-j, j + 1, size=2)) if j else (0, 0)
    moved, out_boxes = translate(image, boxes, dx, dy)
    img = moved.astype(np.float64)
    if shift.blur_radius:
        img = ndimage.uniform_filter(img, size=2 * shift.blur_radius + 1, mode="nearest")
    img = img + shift.brightness_delta
    if shift.noise_sigma:
        img = img + shift.noise_sigma * rng.standard_normal(img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), out_boxes


def rotate_box(box: BBox, k: int, width: int, height: int) -> BBox:
    """Box under ``np.rot90(image, k)`` (counter-clockwise) for an image of the given size."""
    for _ in range(k % 4):
        box = BBox(box.y_min, width - box.x_max, box.y_max, width - box.x_min)
        width, height = height, width
    return box


def flip_box_h(box: BBox, width: int) -> BBox:
    return BBox(width - box.x_max, box.y_min, width - box.x_min, box.y_max)


def flip_box_v(box: BBox, height: int) -> BBox:
    return BBox(box.x_min, height - box.y_max, box.x_max, height - box.y_min)


def augment(
    image: np.ndarray, boxes: Sequence[BBox], op: AugmentOp, rng_seed: int = 0
) -> tuple[np.ndarray, list[BBox]]:
    """Apply one augmentation; geometric ops move the boxes with the pixels."""
    h, w = image.shape
    rng = np.random.default_rng(rng_seed)
    if op.name == "rotate90k":
        k = op.k if op.k is not None else int(rng.integers(1, 4))
        return np.ascontiguousarray(np.rot90(image, k)), [rotate_box(b, k, w, h) for b in boxes]
    if op.name == "flip_h":
        return np.ascontiguousarray(image[:, ::-1]), [flip_box_h(b, w) for b in boxes]
    if op.name == "flip_v":
        return np.ascontiguousarray(image[::-1, :]), [flip_box_v(b, h) for b in boxes]
    if op.name == "gaussian_noise":
        noisy = image + op.sigma * rng.standard_normal(image.shape)
        return np.clip(np.rint(noisy), 0, 255).astype(np.uint8), list(boxes)
    if op.gain == 1.0 and op.bias == 0.0:
        return image.copy(), list(boxes)
    lit = image.astype(np.float64) * op.gain + op.bias
    return np.clip(np.rint(lit), 0, 255).astype(np.uint8), list(boxes)


# -- part samplers -----------------------------------------------------------------


def uniform_part_spec() -> PartSpec:
    """The single plate photographed throughout the uniform family."""
    holes = tuple(((float(x), 0.0), 8.0) for x in (-27, 0, 27))
    return PartSpec("plate_with_holes", 100, holes, base_intensity=175,
                    background_intensity=65, aspect=0.4)


def _holes_inside(spec: PartSpec, rng: np.random.Generator, n: int, r_range: tuple[float, float]):
    holes = []
    half = spec.size_px / 2.0
    for _ in range(n * 20):
        if len(holes) == n:
            break
        r = float(rng.uniform(*r_range))
        lim = half - r - 5
        if lim <= 0:
            break
        hx, hy = (float(v) for v in rng.uniform(-lim, lim, size=2))
        if spec.shape_kind in ("plate_with_holes", "rectangle", "perforated_panel"):
            if abs(hy) > half * spec.aspect - r - 5:
                continue
        elif math.hypot(hx, hy) > lim:
            continue
        if any(math.hypot(hx - ox, hy - oy) < r + orr + 3 for (ox, oy), orr in holes):
            continue
        holes.append(((round(hx, 2), round(hy, 2)), round(r, 2)))
    return tuple(holes)


def place_part(spec: PartSpec, rng: np.random.Generator, image_size: int = 128) -> PartSpec:
    """Random placement of a design inside the image, keeping the margin."""
    slack = image_size / 2.0 - MARGIN - 2 - spec.size_px / 2.0
    if slack < 0:
        raise GenerationError("part too large to place")
    for _ in range(20):
        off = tuple(float(round(v, 2)) for v in rng.uniform(-slack, slack, size=2))
        placed = replace(spec, offset=off)
        try:
            part_mask(placed, image_size)
        except GenerationError:
            continue
        return placed
    raise GenerationError("could not place part inside the image")


def random_part_spec(rng: np.random.Generator, image_size: int = 128) -> PartSpec:
    """Draw one centred part design for the diverse family; every kind is equally likely."""
    for _ in range(100):
        kind = SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
        size = int(rng.integers(44, image_size - 2 * MARGIN - 12))
        bg = int(rng.integers(30, 90))
        base = int(rng.integers(bg + 70, min(bg + 160, 236)))
        aspect = float(round(rng.uniform(0.45, 1.0), 3))
        sides = int(rng.integers(3, 9))
        angle = float(round(rng.uniform(0, 2 * math.pi), 4))
        spec = PartSpec(kind, size, (), base, bg, aspect, sides, angle)
        if kind == "ring":
            inner = max(HOLE_RADIUS[0], size / 2.0 * float(rng.uniform(0.3, 0.6)))
            holes = (((0.0, 0.0), round(inner, 2)),)
        elif kind == "perforated_panel":
            r = float(rng.uniform(*HOLE_RADIUS))
            pitch = 2 * r + float(rng.uniform(6, 10))
            nx = int((size / 2.0 - 6) // pitch)
            ny = int((size * aspect / 2.0 - 6) // pitch)
            holes = tuple(((i * pitch, j * pitch), round(r, 2))
                          for i in range(-nx, nx + 1) for j in range(-ny, ny + 1))
        elif kind in ("plate_with_holes", "disc"):
            holes = _holes_inside(spec, rng, int(rng.integers(1, 4)), HOLE_RADIUS)
        else:
            holes = ()
        spec = replace(spec, hole_pattern=holes)
        try:
            mask = part_mask(spec, image_size)
        except GenerationError:
            continue
        if ndimage.label(mask)[1] == 1:
            return spec
    raise GenerationError("could not draw a valid part spec")


# -- dataset assembly ----------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    family: str = "uniform"
    n_train_val: int = 160
    n_holdout: int = 40
    defect_rate: float = 0.5
    image_size: int = 128
    seed: int = 42
    batch_shift: BatchShift = field(default_factory=BatchShift)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    name: str = ""
    validation_fraction: float = 0.25
    diameter_range: tuple[int, int] = (6, 12)
    bite_range: tuple[float, float] = (0.35, 0.75)

    def __post_init__(self) -> None:
        if self.family not in ("uniform", "diverse"):
            raise GenerationError(f"family must be uniform or diverse, got {self.family!r}")
        if not 0.0 <= self.defect_rate <= 1.0:
            raise GenerationError("defect_rate must lie in [0, 1]")
        if self.n_train_val < 2 or self.n_holdout < 0:
            raise GenerationError("invalid sample counts")
        if self.family == "diverse" and (self.n_train_val % 4 or self.n_holdout % 4):
            raise GenerationError("diverse counts must be multiples of 4 (four rotations per part)")
        if self.image_size < 32:
            raise GenerationError("image_size must be at least 32")

    @property
    def dataset_name(self) -> str:
        return self.name or self.family

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["diameter_range"] = list(self.diameter_range)
        d["bite_range"] = list(self.bite_range)
        d["augment"] = {"ops": [asdict(o) for o in self.augment.ops],
                        "probability": self.augment.probability}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> GeneratorConfig:
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise GenerationError(f"unknown generator config keys {sorted(unknown)}")
        if "batch_shift" in d:
            d["batch_shift"] = BatchShift(**d["batch_shift"])
        if "augment" in d:
            a = d["augment"] or {}
            d["augment"] = AugmentSpec(
                tuple(AugmentOp(**o) for o in a.get("ops", [])), float(a.get("probability", 0.5))
            )
        for key in ("diameter_range", "bite_range"):
            if key in d:
                d[key] = tuple(d[key])
        for key, value in FAMILY_SIZES.get(d.get("family", "uniform"), {}).items():
            d.setdefault(key, value)
        try:
            return cls(**d)
        except TypeError as exc:
            raise GenerationError(str(exc)) from None

    def hash(self) -> str:
        return config_hash(self.to_dict())


# desk-scale default sizes: 160/40 uniform images, 110 parts x 4 rotations / 11 x 4 diverse
FAMILY_SIZES = {
    "uniform": {"n_train_val": 160, "n_holdout": 40},
    "diverse": {"n_train_val": 440, "n_holdout": 44},
}


def default_config(family: str, **overrides: Any) -> GeneratorConfig:
    return GeneratorConfig(family=family, **{**FAMILY_SIZES.get(family, {}), **overrides})


@dataclass
class GeneratedImage:
    image: np.ndarray
    boxes: list[BBox]
    clean: np.ndarray  # defect-free twin, same noise and shift


def _defect_spec(cfg: GeneratorConfig, rng: np.random.Generator) -> DefectSpec:
    lo, hi = cfg.diameter_range
    return DefectSpec(
        diameter_px=int(rng.integers(lo, hi + 1)),
        bite_depth_fraction=float(rng.uniform(*cfg.bite_range)),
    )


def _ng_flags(cfg: GeneratorConfig, n_items: int, group: int, paired: bool = False) -> np.ndarray:
    """Exactly ``round(defect_rate * n_items)`` NG items.

    With ``paired`` the items are twin copies (2j, 2j + 1) and NG status is
    dealt one twin per pair first, so a 50% rate damages exactly one of each.
    """
    n_ng = int(round(cfg.defect_rate * n_items))
    rng = sample_rng(cfg.seed, _SELECT, group)
    if paired:
        n_pairs = n_items // 2
        first = rng.integers(0, 2, size=n_pairs)
        order = rng.permutation(n_pairs)
        seq = [2 * j + first[j] for j in order] + list(range(2 * n_pairs, n_items))
        seq += [2 * j + 1 - first[j] for j in rng.permutation(n_pairs)]
    else:
        seq = rng.permutation(n_items).tolist()
    flags = np.zeros(n_items, dtype=bool)
    flags[seq[:n_ng]] = True
    return flags


def _finish(cfg: GeneratorConfig, index: int, mask: np.ndarray, defect: np.ndarray | None,
            spec: PartSpec, holdout: bool) -> GeneratedImage:
    clean = render(mask, spec, sample_rng(cfg.seed, _TEXTURE, index))
    image = clean.copy()
    boxes: list[BBox] = []
    if defect is not None:
        image[defect] = spec.background_intensity
        boxes = [tight_box(r) for r in _components(defect)]
    if holdout:
        shift_seed = sample_rng(cfg.seed, _SHIFT, index).integers(2**63)
        image, boxes = apply_batch_shift(image, boxes, cfg.batch_shift, np.random.default_rng(shift_seed))
        clean, _ = apply_batch_shift(clean, [], cfg.batch_shift, np.random.default_rng(shift_seed))
    elif cfg.augment.ops:
        arng = sample_rng(cfg.seed, _AUGMENT, index)
        for op in cfg.augment.ops:
            if arng.random() < cfg.augment.probability:
                s = int(arng.integers(2**63))
                image, boxes = augment(image, boxes, op, s)
                clean, _ = augment(clean, [], op, s)
    return GeneratedImage(image, boxes, clean)


def _components(defect: np.ndarray) -> list[np.ndarray]:
    lab, n = ndimage.label(defect)
    regions = [lab == i for i in range(1, n + 1)]
    return sorted(regions, key=lambda r: tuple(np.argwhere(r)[0]))


def generate_images(cfg: GeneratorConfig) -> list[tuple[GeneratedImage, str, int]]:
    """All images of a dataset in index order: (image, batch_id, rotation degrees)."""
    n_total = cfg.n_train_val + cfg.n_holdout
    out: list[tuple[GeneratedImage, str, int]] = []
    if cfg.family == "uniform":
        spec = uniform_part_spec()
        mask = part_mask(spec, cfg.image_size)
        flags = np.r_[_ng_flags(cfg, cfg.n_train_val, 0), _ng_flags(cfg, cfg.n_holdout, 1)]
        for i in range(n_total):
            defect = None
            if flags[i]:
                rng = sample_rng(cfg.seed, _DEFECT, i)
                defect = np.logical_or.reduce(carve_defects(mask, _defect_spec(cfg, rng), rng))
            holdout = i >= cfg.n_train_val
            out.append((_finish(cfg, i, mask, defect, spec, holdout), "B1" if holdout else "B0", 0))
        return out
    n_parts_tv = cfg.n_train_val // 4
    flags = np.r_[_ng_flags(cfg, n_parts_tv, 0, True), _ng_flags(cfg, cfg.n_holdout // 4, 1, True)]
    for p, spec in enumerate(part_specs(cfg)):
        mask = part_mask(spec, cfg.image_size)
        defect = None
        if flags[p]:
            rng = sample_rng(cfg.seed, _DEFECT, 1_000_000 + p)
            defect = np.logical_or.reduce(carve_defects(mask, _defect_spec(cfg, rng), rng))
        holdout = p >= n_parts_tv
        for k in range(4):
            i = 4 * p + k
            m = np.rot90(mask, k)
            d = np.rot90(defect, k) if defect is not None else None
            out.append((_finish(cfg, i, m, d, spec, holdout), "B1" if holdout else "B0", 90 * k))
    return out


def part_specs(cfg: GeneratorConfig) -> list[PartSpec]:
    """Physical parts of a dataset in generation order.

    Diverse parts come as twin copies of one design (2j, 2j + 1), each placed
    independently; train/validation and holdout draw separate designs.
    """
    if cfg.family == "uniform":
        return [uniform_part_spec()]
    specs = []
    n_tv = cfg.n_train_val // 4
    for group, (first, n) in enumerate(((0, n_tv), (n_tv, cfg.n_holdout // 4))):
        for q in range(n):
            design = random_part_spec(
                sample_rng(cfg.seed, _PART, 2_000_000 * group + q // 2), cfg.image_size
            )
            specs.append(place_part(design, sample_rng(cfg.seed, _PART, 1_000_000 + first + q), cfg.image_size))
    return specs


def gen_dataset(cfg: GeneratorConfig, out_dir: str | Path) -> DatasetManifest:
    """Write ``<out>/<name>/images/*.pgm`` and ``<out>/<name>/manifest.json``."""
    root = Path(out_dir) / cfg.dataset_name
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise GenerationError(f"cannot create output directory {root}: {exc}") from None
    name = cfg.dataset_name
    samples = []
    for i, (gen, batch, rot) in enumerate(generate_images(cfg)):
        image_id = f"{name}-{i:05d}"
        rel = f"images/{image_id}.pgm"
        write_pgm(root / rel, gen.image)
        samples.append(Sample(image_id, rel, tuple(gen.boxes), batch, rot))
    tv = samples[: cfg.n_train_val]
    splits = split_dataset(tv, cfg.validation_fraction, cfg.seed)
    splits.update({s.image_id: "holdout" for s in samples[cfg.n_train_val :]})
    manifest = DatasetManifest(name, tuple(samples), splits, cfg.hash(), cfg.seed, root=root)
    save_manifest(manifest, root / "manifest.json")
    return manifest


def load_generator_config(path: str | Path) -> GeneratorConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise GenerationError(f"cannot read generator config {path}: {exc}") from None
    return GeneratorConfig.from_dict(data)
