"""Fixed feature maps standing in for a learned backbone.

A feature vector is two blocks: mean-pooled intensities on a ``pool_grid``
square grid, then per-cell gradient-orientation histograms on a ``hist_grid``
grid. Each block is shifted and scaled by constants stored on the config,
normally fitted once on the training images.
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, replace
from typing import Any, Iterable

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class ExtractorConfig:
    image_size: int = 128
    pool_grid: int = 8
    hist_grid: int = 8
    n_bins: int = 4
    # signed bins cover [0, 2pi): gradients point from dark to bright
    signed: bool = True
    # Gaussian pre-smoothing (pixels) applied before taking gradients
    smooth_sigma: float = 0.0
    pool_mean: float = 0.0
    pool_std: float = 1.0
    grad_mean: float = 0.0
    grad_std: float = 1.0
    # subtract each vector's own mean intensity from its pooled block
    local_contrast: bool = False
    # fixed random ReLU units appended after normalization (0 disables)
    expand: int = 0
    expand_seed: int = 0
    # dense (detector) mode: square windows of this size every `stride` pixels
    window: int = 0
    stride: int = 0

    def __post_init__(self) -> None:
        size = self.window or self.image_size
        if size % self.pool_grid or size % self.hist_grid:
            raise ValueError("grids must divide the feature window size")
        if self.window:
            cells = {self.window // self.pool_grid, self.window // self.hist_grid}
            if self.stride <= 0 or any(self.stride % c for c in cells):
                raise ValueError("stride must be a positive multiple of the cell sizes")
            if any(self.image_size % c for c in cells) or self.window > self.image_size:
                raise ValueError("window layout does not tile the image")
        if self.pool_std <= 0 or self.grad_std <= 0:
            raise ValueError("normalization scales must be positive")
        if self.expand < 0:
            raise ValueError("expand must be >= 0")

    @property
    def base_length(self) -> int:
        return self.pool_grid**2 + self.n_bins * self.hist_grid**2

    @property
    def length(self) -> int:
        return self.base_length + self.expand

    @property
    def layout_id(self) -> str:
        size = self.window or self.image_size
        lid = f"pool{self.pool_grid}-hog{self.hist_grid}x{self.n_bins}-{size}px"
        return lid + (f"-rf{self.expand}s{self.expand_seed}" if self.expand else "")

    @property
    def windows_per_side(self) -> int:
        return (self.image_size - self.window) // self.stride + 1

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExtractorConfig:
        return cls(**d)


def gradient_channels(
    image: np.ndarray, n_bins: int, signed: bool = True, smooth_sigma: float = 0.0
) -> np.ndarray:
    """Per-pixel gradient magnitude split into orientation bins.

    Central differences, zero at the image border. The orientation (over
    [0, 2pi) when signed, [0, pi) otherwise) is hard-assigned to the nearest of
    ``n_bins`` equally spaced bin centres starting at 0.
    """
    img = np.asarray(image, dtype=np.float64)
    if smooth_sigma > 0:
        img = ndimage.gaussian_filter(img, smooth_sigma, mode="nearest")
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = (img[:, 2:] - img[:, :-2]) / 2.0
    gy[1:-1, :] = (img[2:, :] - img[:-2, :]) / 2.0
    mag = np.hypot(gx, gy)
    period = 2 * np.pi if signed else np.pi
    theta = np.mod(np.arctan2(gy, gx), period)
    b = np.floor(theta / (period / n_bins) + 0.5).astype(np.int64) % n_bins
    out = np.zeros((n_bins,) + img.shape)
    for k in range(n_bins):
        out[k] = np.where(b == k, mag, 0.0)
    return out


def _cell_means(arr: np.ndarray, cell: int) -> np.ndarray:
    """Mean over non-overlapping cell x cell tiles of the last two axes."""
    *lead, h, w = arr.shape
    return arr.reshape(*lead, h // cell, cell, w // cell, cell).mean(axis=(-3, -1))


def raw_blocks(image: np.ndarray, config: ExtractorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized (pooled, gradient) blocks for a whole image."""
    image = np.asarray(image)
    if image.shape != (config.image_size, config.image_size):
        raise ValueError(
            f"image size {image.shape} does not match extractor size {config.image_size}"
        )
    pooled = _cell_means(image.astype(np.float64), config.image_size // config.pool_grid)
    if config.local_contrast:
        pooled = pooled - pooled.mean()
    grads = _cell_means(gradient_channels(image, config.n_bins, config.signed, config.smooth_sigma), config.image_size // config.hist_grid)
    # histogram layout: cell-major, bins fastest
    return pooled.ravel(), np.moveaxis(grads, 0, -1).ravel()


@functools.lru_cache(maxsize=8)
def _projection(d: int, width: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    proj = rng.standard_normal((d, width)) / np.sqrt(d)
    offset = rng.standard_normal(width)
    proj.setflags(write=False)
    offset.setflags(write=False)
    return proj, offset


def normalize_blocks(pooled: np.ndarray, grads: np.ndarray, config: ExtractorConfig) -> np.ndarray:
    """Normalized base features, plus the random ReLU expansion when enabled.

    Works on one vector or on a stack of row vectors.
    """
    x = np.concatenate(
        [(pooled - config.pool_mean) / config.pool_std, (grads - config.grad_mean) / config.grad_std],
        axis=-1,
    )
    return expand(x, config)


def expand(x: np.ndarray, config: ExtractorConfig) -> np.ndarray:
    if not config.expand:
        return x
    proj, offset = _projection(config.base_length, config.expand, config.expand_seed)
    return np.concatenate([x, np.maximum(x @ proj + offset, 0.0)], axis=-1)


def extract_features(image: np.ndarray, config: ExtractorConfig) -> np.ndarray:
    return normalize_blocks(*raw_blocks(image, config), config)


def raw_window_blocks(image: np.ndarray, config: ExtractorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized blocks for every window, shape (n_windows, ...).

    Gradients come from the full image, so pixels on a window border see their
    true neighbours outside the window.
    """
    image = np.asarray(image)
    if image.shape != (config.image_size, config.image_size):
        raise ValueError(
            f"image size {image.shape} does not match extractor size {config.image_size}"
        )
    n = config.windows_per_side

    def tile(cells: np.ndarray, grid: int) -> np.ndarray:
        cell = config.window // grid
        step = config.stride // cell
        # cells: (..., H/cell, W/cell) -> (n, n, ..., grid, grid)
        idx = np.arange(n)[:, None] * step + np.arange(grid)[None, :]
        t = cells[..., idx[:, None, :, None], idx[None, :, None, :]]
        return t

    pc = _cell_means(image.astype(np.float64), config.window // config.pool_grid)
    pooled = tile(pc, config.pool_grid).reshape(n * n, -1)
    if config.local_contrast:
        pooled = pooled - pooled.mean(axis=1, keepdims=True)
    gc = _cell_means(gradient_channels(image, config.n_bins, config.signed, config.smooth_sigma), config.window // config.hist_grid)
    g = tile(gc, config.hist_grid)  # (bins, n, n, grid, grid)
    grads = np.moveaxis(g, 0, -1).reshape(n * n, -1)
    return pooled, grads


def window_boxes(config: ExtractorConfig) -> np.ndarray:
    """Window boxes as rows (x_min, y_min, x_max, y_max), matching window feature order."""
    n = config.windows_per_side
    starts = np.arange(n) * config.stride
    ys, xs = np.meshgrid(starts, starts, indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    return np.stack([xs, ys, xs + config.window, ys + config.window], axis=1)


def window_features(image: np.ndarray, config: ExtractorConfig) -> np.ndarray:
    return normalize_blocks(*raw_window_blocks(image, config), config)


def fit_normalization(blocks: Iterable[tuple[np.ndarray, np.ndarray]], config: ExtractorConfig) -> ExtractorConfig:
    """Block-wise mean and standard deviation over all entries of all samples."""
    pooled, grads = zip(*blocks)
    p = np.concatenate([np.ravel(a) for a in pooled])
    g = np.concatenate([np.ravel(a) for a in grads])
    return replace(
        config,
        pool_mean=float(p.mean()),
        pool_std=float(p.std()) or 1.0,
        grad_mean=float(g.mean()),
        grad_std=float(g.std()) or 1.0,
    )
