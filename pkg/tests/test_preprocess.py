"""Preprocessing stage tests against independent oracles.

The non-local means oracle is a direct double-loop evaluation of the weighted
mean formula with libm exp and mirror indexing; the threshold oracle is an
exhaustive 256-threshold sweep with exact rational arithmetic.  Production
output must match both exactly.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from octpad import kernels
from octpad.errors import ConfigError, DataError
from octpad.preprocess import (
    PreprocessConfig,
    dilate,
    nlm_denoise,
    otsu_threshold,
    preprocess_pipeline,
)

BACKENDS = ["python"] + (["compiled"] if kernels.HAVE_COMPILED else [])


# --- oracles ---------------------------------------------------------------


def mirror(i: int, n: int) -> int:
    """Reflect-101 index folding (no edge repeat), applied repeatedly."""
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * n - 2 - i
    return i


def nlm_oracle(img: np.ndarray, h: float, template: int, search: int) -> np.ndarray:
    """Naive double-loop weighted mean, straight from the formula."""
    hh, ww = img.shape
    tr, sr = template // 2, search // 2
    area = template * template
    h2 = h * h
    out = np.empty((hh, ww), dtype=np.uint8)
    for r in range(hh):
        for c in range(ww):
            num = 0.0
            den = 0.0
            for dy in range(-sr, sr + 1):
                for dx in range(-sr, sr + 1):
                    ssd = 0
                    for ty in range(-tr, tr + 1):
                        for tx in range(-tr, tr + 1):
                            a = int(img[mirror(r + ty, hh), mirror(c + tx, ww)])
                            b = int(
                                img[mirror(r + dy + ty, hh), mirror(c + dx + tx, ww)]
                            )
                            ssd += (a - b) * (a - b)
                    w = math.exp(-((ssd / area) / h2))
                    num += w * float(img[mirror(r + dy, hh), mirror(c + dx, ww)])
                    den += w
            out[r, c] = min(255, max(0, int(math.floor(num / den + 0.5))))
    return out


def window_mean_oracle(img: np.ndarray, search: int) -> np.ndarray:
    """Rounded mean of the mirror-padded search window (the h -> inf limit)."""
    hh, ww = img.shape
    sr = search // 2
    out = np.empty((hh, ww), dtype=np.float64)
    for r in range(hh):
        for c in range(ww):
            total = 0
            for dy in range(-sr, sr + 1):
                for dx in range(-sr, sr + 1):
                    total += int(img[mirror(r + dy, hh), mirror(c + dx, ww)])
            out[r, c] = total / (search * search)
    return out


def otsu_oracle(img: np.ndarray) -> tuple[int, np.ndarray]:
    """Exhaustive sweep of all 256 thresholds with exact rational variance."""
    flat = img.ravel().tolist()
    n = len(flat)
    best_t, best_var = None, None
    for t in range(256):
        lo = [v for v in flat if v <= t]
        hi = [v for v in flat if v > t]
        if not lo or not hi:
            continue
        w0 = Fraction(len(lo), n)
        w1 = Fraction(len(hi), n)
        mu0 = Fraction(sum(lo), len(lo))
        mu1 = Fraction(sum(hi), len(hi))
        var = w0 * w1 * (mu0 - mu1) ** 2
        if best_var is None or var > best_var:
            best_t, best_var = t, var
    if best_t is None:
        raise ValueError("constant image")
    return best_t, img > best_t


def dilate_oracle(img: np.ndarray, kernel: int) -> np.ndarray:
    hh, ww = img.shape
    r = kernel // 2
    out = np.empty_like(img)
    for i in range(hh):
        for j in range(ww):
            out[i, j] = max(
                img[mirror(i + dy, hh), mirror(j + dx, ww)]
                for dy in range(-r, r + 1)
                for dx in range(-r, r + 1)
            )
    return out


# --- non-local means -------------------------------------------------------


@pytest.mark.parametrize("backend", BACKENDS)
def test_nlm_constant_image_identity(backend):
    img = np.full((24, 24), 77, dtype=np.uint8)
    cfg = PreprocessConfig(template=3, search=9)
    assert np.array_equal(nlm_denoise(img, cfg, backend=backend), img)


@pytest.mark.parametrize("backend", BACKENDS)
def test_nlm_huge_h_is_window_mean(backend):
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
    cfg = PreprocessConfig(h=1e6, template=3, search=9)
    out = nlm_denoise(img, cfg, backend=backend)
    mean = window_mean_oracle(img, 9)
    assert np.all(np.abs(out.astype(np.float64) - np.round(mean)) <= 1.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_nlm_center_spike_matches_oracle(backend):
    img = np.zeros((9, 9), dtype=np.uint8)
    img[4, 4] = 255
    cfg = PreprocessConfig(h=20.0, template=3, search=9)
    out = nlm_denoise(img, cfg, backend=backend)
    assert np.array_equal(out, nlm_oracle(img, 20.0, 3, 9))


@pytest.mark.parametrize("backend", BACKENDS)
def test_nlm_random_images_match_oracle(backend):
    rng = np.random.default_rng(123)
    cfg = PreprocessConfig(h=20.0, template=3, search=9)
    for _ in range(12):
        hh = int(rng.integers(9, 25))
        ww = int(rng.integers(9, 25))
        img = rng.integers(0, 256, size=(hh, ww), dtype=np.uint8)
        out = nlm_denoise(img, cfg, backend=backend)
        assert np.array_equal(out, nlm_oracle(img, 20.0, 3, 9))


def test_nlm_backends_agree_bitwise():
    if not kernels.HAVE_COMPILED:
        pytest.skip("compiled kernel not built")
    rng = np.random.default_rng(7)
    cfg = PreprocessConfig(h=8.0, template=5, search=11)
    img = rng.integers(0, 256, size=(30, 26), dtype=np.uint8)
    a = nlm_denoise(img, cfg, backend="compiled")
    b = nlm_denoise(img, cfg, backend="python")
    assert np.array_equal(a, b)


@pytest.mark.parametrize("backend", BACKENDS)
def test_nlm_range_preserved(backend):
    rng = np.random.default_rng(11)
    cfg = PreprocessConfig(h=15.0, template=3, search=9)
    for _ in range(5):
        img = rng.integers(40, 200, size=(12, 14), dtype=np.uint8)
        out = nlm_denoise(img, cfg, backend=backend)
        assert out.min() >= img.min() and out.max() <= img.max()


def test_nlm_too_small_errors():
    img = np.zeros((10, 40), dtype=np.uint8)
    with pytest.raises(DataError, match="image too small"):
        nlm_denoise(img, PreprocessConfig())  # search 21 > 10 rows


def test_preprocess_config_invariants():
    with pytest.raises(ConfigError):
        PreprocessConfig(template=8)
    with pytest.raises(ConfigError):
        PreprocessConfig(template=21, search=21)
    with pytest.raises(ConfigError):
        PreprocessConfig(h=0)
    with pytest.raises(ConfigError):
        PreprocessConfig(dilate_kernel=1)


# --- dilation ----------------------------------------------------------------


def test_dilate_single_pixel_block():
    img = np.zeros((11, 11), dtype=np.uint8)
    img[5, 5] = 255
    out = dilate(img, 5)
    expected = np.zeros_like(img)
    expected[3:8, 3:8] = 255
    assert np.array_equal(out, expected)


def test_dilate_constant_unchanged():
    img = np.full((8, 9), 42, dtype=np.uint8)
    assert np.array_equal(dilate(img, 5), img)


def test_dilate_flip_commutes_and_monotone():
    rng = np.random.default_rng(3)
    for _ in range(10):
        img = rng.integers(0, 256, size=(15, 12), dtype=np.uint8)
        out = dilate(img, 3)
        assert np.all(out >= img)
        assert np.array_equal(dilate(img[:, ::-1], 3), out[:, ::-1])


def test_dilate_matches_bruteforce():
    rng = np.random.default_rng(4)
    for k in (3, 5):
        img = rng.integers(0, 256, size=(13, 17), dtype=np.uint8)
        assert np.array_equal(dilate(img, k), dilate_oracle(img, k))


# --- thresholding ------------------------------------------------------------


def test_otsu_two_level_example():
    # {four 10s, four 200s}: any t in [10, 199] maximizes; smallest wins
    img = np.array([[10, 10, 200, 200], [10, 10, 200, 200]], dtype=np.uint8)
    t, mask = otsu_threshold(img)
    assert t == 10
    assert np.array_equal(mask, img == 200)


def test_otsu_constant_errors():
    img = np.full((6, 6), 128, dtype=np.uint8)
    with pytest.raises(DataError, match="degenerate histogram"):
        otsu_threshold(img)


def test_otsu_matches_exhaustive_oracle():
    rng = np.random.default_rng(99)
    for _ in range(100):
        img = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
        if img.min() == img.max():
            continue
        t, mask = otsu_threshold(img)
        t_ref, mask_ref = otsu_oracle(img)
        assert t == t_ref
        assert np.array_equal(mask, mask_ref)


def test_otsu_variance_is_maximal():
    rng = np.random.default_rng(17)
    img = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
    t, _ = otsu_threshold(img)
    flat = img.ravel().tolist()
    n = len(flat)

    def var_at(tt):
        lo = [v for v in flat if v <= tt]
        hi = [v for v in flat if v > tt]
        if not lo or not hi:
            return Fraction(-1)
        return (
            Fraction(len(lo), n)
            * Fraction(len(hi), n)
            * (Fraction(sum(lo), len(lo)) - Fraction(sum(hi), len(hi))) ** 2
        )

    best = var_at(t)
    assert all(var_at(tt) <= best for tt in range(256))


# --- composed pipeline -------------------------------------------------------


def test_pipeline_on_noise_free_phantom_covers_bands():
    from dataclasses import replace

    from octpad.imagecore import Label
    from octpad.synth import PhantomParams, generate_phantom

    # tall phantom so the fixed dilation halo stays a small share of the
    # background (mirrors real scan proportions)
    params = replace(PhantomParams(seed=5), height=320, speckle_sigma=0.0,
                     duct_count=0, band_brightness=200.0)
    pixels, truth = generate_phantom(params, Label.BONAFIDE)
    mask = preprocess_pipeline(pixels)
    band = truth.band_mask
    band_coverage = mask[band].mean()
    background_hit = mask[~band].mean()
    assert band_coverage >= 0.90
    assert background_hit <= 0.05


def test_pipeline_constant_image_propagates_error():
    img = np.full((64, 64), 50, dtype=np.uint8)
    with pytest.raises(DataError, match="degenerate histogram"):
        preprocess_pipeline(img)


def test_pipeline_deterministic():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, size=(32, 40), dtype=np.uint8)
    cfg = PreprocessConfig(template=3, search=9)
    a = preprocess_pipeline(img, cfg)
    b = preprocess_pipeline(img, cfg)
    assert np.array_equal(a, b)
