"""End-to-end composition: scan -> mask -> patches -> spoofness scores.

Patches are always cut from the original grayscale scan; the denoised and
dilated image only drives candidate detection.
"""

from __future__ import annotations

import numpy as np

from octpad.cnn.model import CnnModel
from octpad.imagecore import BScan, ScanRecord, load_scan
from octpad.patches import Patch, PatchConfig, extract_patches, find_candidates, select_candidates
from octpad.preprocess import PreprocessConfig, preprocess_pipeline


def scan_to_patches(scan: BScan, pre_cfg: PreprocessConfig = PreprocessConfig(),
                    patch_cfg: PatchConfig = PatchConfig(),
                    backend: str | None = None) -> list[Patch]:
    """Full extraction pipeline for one scan (possibly empty)."""
    mask = preprocess_pipeline(scan, pre_cfg, backend=backend)
    cands = find_candidates(mask, patch_cfg)
    selected = select_candidates(cands, patch_cfg.max_patches)
    return extract_patches(scan, selected, patch_cfg)


def patch_stack(patches: list[Patch]) -> np.ndarray | None:
    """Stack patch pixels into (P, H, W) uint8; None when empty."""
    if not patches:
        return None
    return np.stack([p.pixels for p in patches])


def scan_patch_stack(scan: BScan, pre_cfg: PreprocessConfig = PreprocessConfig(),
                     patch_cfg: PatchConfig = PatchConfig(),
                     backend: str | None = None) -> np.ndarray | None:
    return patch_stack(scan_to_patches(scan, pre_cfg, patch_cfg, backend=backend))


def subsample_stack(stack: np.ndarray, cap: int) -> np.ndarray:
    """Deterministically keep at most ``cap`` patches, evenly spaced over the
    surface-first selection order (keeps depth diversity without RNG)."""
    if cap <= 0 or stack.shape[0] <= cap:
        return stack
    idx = np.unique(np.round(np.linspace(0, stack.shape[0] - 1, cap)).astype(int))
    return stack[idx]


def build_patch_dataset(records: list[ScanRecord],
                        pre_cfg: PreprocessConfig = PreprocessConfig(),
                        patch_cfg: PatchConfig = PatchConfig(),
                        per_scan_cap: int = 0,
                        backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Extract a labeled patch dataset from a manifest.

    Patch labels inherit the scan label (0 = bonafide, 1 = PA).  Scans that
    yield no candidates contribute nothing.
    """
    stacks = []
    labels = []
    for rec in records:
        scan = load_scan(rec.path, rec)
        stack = scan_patch_stack(scan, pre_cfg, patch_cfg, backend=backend)
        if stack is None:
            continue
        if per_scan_cap:
            stack = subsample_stack(stack, per_scan_cap)
        stacks.append(stack)
        labels.append(np.full(stack.shape[0], 0 if rec.label.value == "bonafide" else 1))
    if not stacks:
        return (np.zeros((0, patch_cfg.patch_h, patch_cfg.patch_w), dtype=np.uint8),
                np.zeros(0, dtype=np.int64))
    return np.concatenate(stacks), np.concatenate(labels).astype(np.int64)


def score_patch_stack(model: CnnModel, stack: np.ndarray,
                      batch_size: int = 64) -> np.ndarray:
    """Spoofness scores for a patch stack, batched for memory."""
    scores = []
    for start in range(0, stack.shape[0], batch_size):
        probs = model.predict_proba(stack[start : start + batch_size])
        scores.append(probs[:, 1])
    return np.concatenate(scores)
