"""Depth-profile candidate detection and local patch extraction.

Candidates are found by raster-scanning the binary mask on a stride lattice:
a lattice point qualifies when its window contains enough foreground pixels.
Patches are then cropped from the *original* grayscale scan (never the
denoised one) so the classifier sees real texture, with the candidate pinned
at a fixed anchor inside the patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from octpad.errors import ConfigError, DataError
from octpad.imagecore import BScan


@dataclass(frozen=True)
class PatchConfig:
    stride: int = 30
    window: int = 9
    min_nonzero: int = 20
    patch_h: int = 150
    patch_w: int = 150
    anchor_row: int = 50
    anchor_col: int = 75
    max_patches: int = 60

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError("window must be odd and >= 1")
        if self.min_nonzero > self.window * self.window:
            raise ConfigError("min_nonzero cannot exceed window^2")
        if not (0 <= self.anchor_row < self.patch_h):
            raise ConfigError("anchor_row must lie inside the patch")
        if not (0 <= self.anchor_col < self.patch_w):
            raise ConfigError("anchor_col must lie inside the patch")
        if self.max_patches < 1:
            raise ConfigError("max_patches must be >= 1")


@dataclass(frozen=True)
class Candidate:
    """A lattice point on the mask that qualified for patch extraction."""

    row: int
    col: int
    grid_row: int
    grid_col: int


@dataclass(frozen=True)
class Patch:
    """A patch_h x patch_w crop of the original scan around a candidate."""

    pixels: np.ndarray
    source_scan_id: str
    candidate: Candidate

    def __post_init__(self) -> None:
        self.pixels.setflags(write=False)


def find_candidates(mask: np.ndarray, cfg: PatchConfig = PatchConfig()) -> list[Candidate]:
    """Scan the stride lattice and keep points whose window x window
    neighborhood holds at least ``min_nonzero`` foreground pixels.

    Lattice points whose window would overrun the mask edge are skipped (the
    count rule is undefined on partial windows).  Output is in raster order.
    """
    if mask.ndim != 2 or mask.dtype != np.bool_:
        raise DataError("mask must be a 2-D boolean array")
    h, w = mask.shape
    if h < cfg.window or w < cfg.window:
        raise DataError(f"mask {h}x{w} smaller than the {cfg.window}x{cfg.window} window")
    r = cfg.window // 2
    stride = cfg.stride

    # integral image for exact window counts
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask, axis=0, dtype=np.int64), axis=1, out=ii[1:, 1:])

    first_row = -(-r // stride) * stride  # smallest lattice multiple >= r
    rows = range(first_row, h - r, stride)
    cols = range(-(-r // stride) * stride, w - r, stride)
    out: list[Candidate] = []
    for row in rows:
        top, bot = row - r, row + r + 1
        for col in cols:
            left, right = col - r, col + r + 1
            count = ii[bot, right] - ii[top, right] - ii[bot, left] + ii[top, left]
            if count >= cfg.min_nonzero:
                out.append(Candidate(row, col, row // stride, col // stride))
    return out


def select_candidates(cands: list[Candidate], max_patches: int = 60) -> list[Candidate]:
    """Order candidates surface-first and truncate.

    Candidates are grouped by lattice column; the shallowest (topmost) point
    of every column is emitted left-to-right, then the second-shallowest of
    every column, and so on, until ``max_patches`` is reached.  This spreads
    the kept patches across the full lateral extent before descending.
    """
    columns: dict[int, list[Candidate]] = {}
    for cand in cands:
        columns.setdefault(cand.grid_col, []).append(cand)
    ranked = {
        col: sorted(group, key=lambda c: c.row) for col, group in columns.items()
    }
    out: list[Candidate] = []
    depth = 0
    while len(out) < max_patches:
        layer = [
            ranked[col][depth] for col in sorted(ranked) if depth < len(ranked[col])
        ]
        if not layer:
            break
        out.extend(layer)
        depth += 1
    return out[:max_patches]


def extract_patches(scan: BScan, selected: list[Candidate],
                    cfg: PatchConfig = PatchConfig()) -> list[Patch]:
    """Crop one patch per selected candidate from the original scan.

    The crop places the candidate at ``(anchor_row, anchor_col)``; when that
    span would overrun the image, the window is shifted minimally to fit (the
    recorded candidate keeps its original coordinates).
    """
    pixels = scan.pixels
    h, w = pixels.shape
    if h < cfg.patch_h or w < cfg.patch_w:
        raise DataError(
            f"image {h}x{w} smaller than patch {cfg.patch_h}x{cfg.patch_w}"
        )
    out: list[Patch] = []
    for cand in selected:
        top = min(max(cand.row - cfg.anchor_row, 0), h - cfg.patch_h)
        left = min(max(cand.col - cfg.anchor_col, 0), w - cfg.patch_w)
        crop = pixels[top : top + cfg.patch_h, left : left + cfg.patch_w].copy()
        out.append(Patch(pixels=crop, source_scan_id=scan.scan_id, candidate=cand))
    return out
