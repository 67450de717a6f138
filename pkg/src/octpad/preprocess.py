"""Denoise, enhance, and binarize a B-scan to expose the finger depth profile.

The stage order is fixed: non-local means denoising, grayscale dilation
(max filter), then global thresholding.  Depth-profile tissue is brighter
than the background, so the foreground of the binary mask is the set of
pixels *above* the threshold.

All three operations are pure functions of their inputs; borders are handled
by reflective (mirror) padding so that dark frame artifacts cannot leak into
the threshold statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from octpad import kernels
from octpad.errors import ConfigError, DataError
from octpad.imagecore import BScan


@dataclass(frozen=True)
class PreprocessConfig:
    """Parameters of the denoise/dilate/threshold stage.

    ``h`` is the non-local means filter strength; ``template`` and ``search``
    are the odd window sizes of the patch comparison and the search region;
    ``dilate_kernel`` is the odd max-filter size.
    """

    h: float = 20.0
    template: int = 7
    search: int = 21
    dilate_kernel: int = 5

    def __post_init__(self) -> None:
        for name in ("template", "search", "dilate_kernel"):
            v = getattr(self, name)
            if v < 3 or v % 2 == 0:
                raise ConfigError(f"{name} must be odd and >= 3, got {v}")
        if self.template >= self.search:
            raise ConfigError(
                f"template ({self.template}) must be smaller than search ({self.search})"
            )
        if not self.h > 0:
            raise ConfigError(f"h must be positive, got {self.h}")


def _as_pixels(img: BScan | np.ndarray) -> np.ndarray:
    if isinstance(img, BScan):
        return img.pixels
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DataError("expected a 2-D uint8 image")
    return arr


def nlm_denoise(img: BScan | np.ndarray, cfg: PreprocessConfig = PreprocessConfig(),
                backend: str | None = None) -> np.ndarray:
    """Non-local means denoising.

    Each output pixel is the similarity-weighted mean of the pixels in the
    search window centered on it, the weight of a neighbor being
    ``exp(-(d2 / h^2))`` with ``d2`` the mean squared difference between the
    two template windows.  The result is rounded to the nearest integer.
    """
    pixels = _as_pixels(img)
    h, w = pixels.shape
    if h < cfg.search or w < cfg.search:
        raise DataError(
            f"image too small: {h}x{w} is below the {cfg.search}x{cfg.search} search window"
        )
    tr = cfg.template // 2
    sr = cfg.search // 2
    padded = np.pad(pixels, sr + tr, mode="reflect")
    return kernels.nlm_denoise_padded(padded, h, w, tr, sr, float(cfg.h), backend=backend)


def dilate(img: BScan | np.ndarray, kernel: int = 5) -> np.ndarray:
    """Grayscale dilation: each pixel becomes the max of its kernel x kernel
    neighborhood (reflective padding)."""
    if kernel < 3 or kernel % 2 == 0:
        raise ConfigError(f"dilation kernel must be odd and >= 3, got {kernel}")
    pixels = _as_pixels(img)
    r = kernel // 2
    padded = np.pad(pixels, r, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel))
    return windows.max(axis=(2, 3))


def otsu_threshold(img: BScan | np.ndarray) -> tuple[int, np.ndarray]:
    """Global threshold maximizing the between-class intensity variance.

    Classes are pixels ``<= t`` versus ``> t``; ties are broken toward the
    smallest maximizing ``t``.  Returns ``(t, mask)`` with ``mask = img > t``
    (foreground = bright depth profile).  The argmax is computed in exact
    integer arithmetic, so the tie-break is not subject to rounding noise.
    """
    pixels = _as_pixels(img)
    hist = np.bincount(pixels.ravel(), minlength=256)
    total = int(pixels.size)
    total_sum = int(np.dot(np.arange(256, dtype=np.int64), hist))

    # between-class variance at t is proportional to a^2 / b with
    #   a = s0*n1 - s1*n0,  b = n0*n1
    # (n0, s0 = count/intensity sum at or below t); compare exactly via
    # cross-multiplication of a^2/b fractions.
    best_t = -1
    best_a2 = 0
    best_b = 1
    n0 = 0
    s0 = 0
    for t in range(256):
        n0 += int(hist[t])
        s0 += t * int(hist[t])
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = total_sum - s0
        a = s0 * n1 - s1 * n0
        a2 = a * a
        b = n0 * n1
        if best_t < 0 or a2 * best_b > best_a2 * b:
            best_t, best_a2, best_b = t, a2, b
    if best_t < 0:
        raise DataError("degenerate histogram: constant image has no two-class split")
    return best_t, pixels > best_t


def preprocess_pipeline(scan: BScan | np.ndarray,
                        cfg: PreprocessConfig = PreprocessConfig(),
                        backend: str | None = None) -> np.ndarray:
    """Full stage: denoise, dilate, threshold.  Returns the boolean mask."""
    denoised = nlm_denoise(scan, cfg, backend=backend)
    enhanced = dilate(denoised, cfg.dilate_kernel)
    _, mask = otsu_threshold(enhanced)
    return mask
