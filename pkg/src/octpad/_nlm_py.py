"""Pure-numpy non-local means kernel (fallback when the compiled one is absent).

Produces bit-identical output to ``octpad._nlm_c``: integer distance sums,
weights from a libm-``exp`` table, and accumulation over search offsets in
row-major order (vectorized per offset, which preserves each pixel's scalar
operation sequence).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

# Same limit as the compiled kernel; larger tables switch to a per-unique-value
# computation to keep exotic template sizes exact without huge allocations.
_MAX_TABLE_ENTRIES = 8_388_608


@lru_cache(maxsize=8)
def _weight_table(area: int, h: float) -> np.ndarray | None:
    entries = area * 65025 + 1
    if entries > _MAX_TABLE_ENTRIES:
        return None
    h2 = h * h
    table = np.fromiter(
        (math.exp(-((s / area) / h2)) for s in range(entries)),
        dtype=np.float64,
        count=entries,
    )
    table.setflags(write=False)
    return table


def _box_sum(arr: np.ndarray, t: int) -> np.ndarray:
    """Exact int64 sliding-window (t x t) sums of a 2-D integer array."""
    cs = np.cumsum(arr, axis=0, dtype=np.int64)
    vert = cs[t - 1 :].copy()
    vert[1:] -= cs[: -t]
    cs = np.cumsum(vert, axis=1, dtype=np.int64)
    out = cs[:, t - 1 :].copy()
    out[:, 1:] -= cs[:, : -t]
    return out


def nlm_denoise_padded(padded: np.ndarray, height: int, width: int,
                       template_radius: int, search_radius: int, h: float) -> np.ndarray:
    """Denoise the core ``height x width`` region of a reflect-padded image."""
    tr, sr = template_radius, search_radius
    pad = sr + tr
    if padded.shape != (height + 2 * pad, width + 2 * pad):
        raise ValueError("padded image has wrong shape")
    t = 2 * tr + 1
    area = t * t
    h2 = h * h
    table = _weight_table(area, h)

    center = padded[pad - tr : pad + height + tr, pad - tr : pad + width + tr].astype(np.int32)
    num = np.zeros((height, width), dtype=np.float64)
    den = np.zeros((height, width), dtype=np.float64)

    for dy in range(-sr, sr + 1):
        for dx in range(-sr, sr + 1):
            shifted = padded[
                pad - tr + dy : pad + height + tr + dy,
                pad - tr + dx : pad + width + tr + dx,
            ].astype(np.int32)
            d = center - shifted
            s = _box_sum(d * d, t)
            if table is not None:
                w = table[s]
            else:
                vals, inverse = np.unique(s, return_inverse=True)
                w = np.fromiter(
                    (math.exp(-((v / area) / h2)) for v in vals),
                    dtype=np.float64,
                    count=len(vals),
                )[inverse].reshape(s.shape)
            neighbor = padded[pad + dy : pad + height + dy, pad + dx : pad + width + dx]
            num += w * neighbor
            den += w

    out = np.floor(num / den + 0.5)
    return np.clip(out, 0.0, 255.0).astype(np.uint8)
