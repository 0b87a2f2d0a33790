import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inspecta.features import (
    ExtractorConfig,
    extract_features,
    fit_normalization,
    gradient_channels,
    raw_blocks,
    raw_window_blocks,
    window_boxes,
    window_features,
)

rng = np.random.default_rng(0)
IMG = rng.integers(0, 256, (128, 128), dtype=np.uint8)


def test_default_length():
    cfg = ExtractorConfig()
    assert cfg.length == 320
    assert extract_features(IMG, cfg).shape == (320,)
    assert cfg.layout_id == "pool8-hog8x4-128px"


def test_constant_image():
    pooled, grads = raw_blocks(np.full((128, 128), 77, np.uint8), ExtractorConfig())
    assert np.all(pooled == 77.0)
    assert np.all(grads == 0.0)


def test_flip_reverses_pooled_columns():
    cfg = ExtractorConfig()
    a, _ = raw_blocks(IMG, cfg)
    b, _ = raw_blocks(IMG[:, ::-1], cfg)
    assert np.allclose(b.reshape(8, 8), a.reshape(8, 8)[:, ::-1], atol=1e-12)


def test_size_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        extract_features(np.zeros((64, 64), np.uint8), ExtractorConfig())


def test_normalization_constants_apply():
    cfg = ExtractorConfig(pool_mean=10.0, pool_std=2.0, grad_mean=1.0, grad_std=4.0)
    p, g = raw_blocks(IMG, cfg)
    x = extract_features(IMG, cfg)
    assert np.allclose(x[:64], (p - 10.0) / 2.0)
    assert np.allclose(x[64:], (g - 1.0) / 4.0)


def test_fit_normalization_standardizes():
    imgs = [rng.integers(0, 256, (128, 128), dtype=np.uint8) for _ in range(4)]
    cfg = fit_normalization([raw_blocks(im, ExtractorConfig()) for im in imgs], ExtractorConfig())
    X = np.stack([extract_features(im, cfg) for im in imgs])
    assert abs(X[:, :64].mean()) < 1e-9 and abs(X[:, :64].std() - 1) < 1e-9
    assert abs(X[:, 64:].mean()) < 1e-9 and abs(X[:, 64:].std() - 1) < 1e-9


def test_gradient_orientation_bins():
    ramp = np.tile(np.arange(16, dtype=np.float64) * 4, (16, 1))  # brighter to the right
    ch = gradient_channels(ramp, 4)
    assert ch[0, 5, 5] == pytest.approx(4.0)
    assert ch[1:, 5, 5].sum() == 0
    # reversed ramp: signed bins see pi, unsigned fold it back to 0
    assert gradient_channels(ramp[:, ::-1], 4)[2, 5, 5] == pytest.approx(4.0)
    assert gradient_channels(ramp[:, ::-1], 4, signed=False)[0, 5, 5] == pytest.approx(4.0)


def test_window_layout():
    cfg = ExtractorConfig(pool_grid=4, hist_grid=4, window=16, stride=8)
    boxes = window_boxes(cfg)
    assert len(boxes) == 15 * 15
    assert boxes[1].tolist() == [8, 0, 24, 16]
    assert boxes[15].tolist() == [0, 8, 16, 24]
    pooled, grads = raw_window_blocks(IMG, cfg)
    for i in (0, 17, 224):
        x0, y0, x1, y1 = boxes[i]
        crop = IMG[y0:y1, x0:x1].astype(np.float64)
        assert np.allclose(pooled[i], crop.reshape(4, 4, 4, 4).mean(axis=(1, 3)).ravel())
    full = gradient_channels(IMG, 4)
    x0, y0, x1, y1 = boxes[17]
    ref = full[:, y0:y1, x0:x1].reshape(4, 4, 4, 4, 4).mean(axis=(2, 4))
    assert np.allclose(grads[17], np.moveaxis(ref, 0, -1).ravel())
    assert window_features(IMG, cfg).shape == (225, cfg.length)


def test_local_contrast_removes_offset():
    cfg = ExtractorConfig(pool_grid=4, hist_grid=4, window=16, stride=8, local_contrast=True)
    a, _ = raw_window_blocks(IMG // 2, cfg)
    b, _ = raw_window_blocks(IMG // 2 + 20, cfg)
    assert np.allclose(a, b)


def test_expansion_is_fixed_and_appended():
    cfg = ExtractorConfig(expand=32, expand_seed=3)
    x = extract_features(IMG, cfg)
    assert x.shape == (352,)
    assert np.array_equal(x[:320], extract_features(IMG, ExtractorConfig()))
    assert np.all(x[320:] >= 0)
    assert np.array_equal(x, extract_features(IMG, cfg))
    assert not np.array_equal(x, extract_features(IMG, ExtractorConfig(expand=32, expand_seed=4)))
    assert cfg.layout_id.endswith("-rf32s3")


@pytest.mark.parametrize(
    "kw", [dict(pool_grid=7), dict(window=16, stride=3, pool_grid=4, hist_grid=4), dict(pool_std=0.0), dict(expand=-1)]
)
def test_invalid_configs(kw):
    with pytest.raises(ValueError):
        ExtractorConfig(**kw)


@given(st.integers(0, 2**32 - 1))
def test_features_finite(seed):
    img = np.random.default_rng(seed).integers(0, 256, (128, 128), dtype=np.uint8)
    assert np.all(np.isfinite(extract_features(img, ExtractorConfig())))
