"""Evidence backtracking: trace the predicted class back to input pixels.

Starting from the winning output unit, each layer's fixated units are mapped
to the units of the layer below that carried their evidence:

* fully connected: the inputs with the largest positive contributions
  ``w_ij * x_j`` (up to ``top_k_fc`` per fixated unit);
* relu / softmax: passed through (dead relu inputs are dropped);
* max pooling: the window position that attained the max;
* convolution: the receptive-field location maximizing the summed positive
  contribution across input channels, carried on the channel that contributed
  most there;
* flatten: index unraveling.

The surviving input-pixel locations ("fixations") are deduplicated with
multiplicity, which then weights the Gaussian kernels of the density heatmap.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from octpad.cnn.model import (
    CnnModel,
    Conv,
    Flatten,
    FullyConnected,
    MaxPool,
    ReLU,
    Softmax,
)
from octpad.errors import ConfigError, DataError
from octpad.imagecore import Label
from octpad.patches import Patch


@dataclass(frozen=True)
class HeatmapConfig:
    kde_sigma: float = 5.0
    top_k_fc: int = 5
    conv_keep: str = "argmax_per_field"

    def __post_init__(self) -> None:
        if self.kde_sigma <= 0:
            raise ConfigError("kde_sigma must be positive")
        if self.top_k_fc < 1:
            raise ConfigError("top_k_fc must be >= 1")
        if self.conv_keep != "argmax_per_field":
            raise ConfigError(f"unknown conv_keep policy {self.conv_keep!r}")


@dataclass(frozen=True)
class FixationSet:
    """Discriminative input-pixel locations for one patch prediction."""

    points: tuple[tuple[int, int], ...]
    weights: tuple[int, ...]
    predicted_class: Label
    patch_id: str


def _fc_step(tokens: Counter, w: np.ndarray, x: np.ndarray, top_k: int) -> Counter:
    out: Counter = Counter()
    for unit, mult in tokens.items():
        contrib = w[unit] * x
        order = np.argsort(-contrib, kind="stable")[:top_k]
        for j in order:
            if contrib[j] > 0:
                out[int(j)] += mult
    return out


def _conv_step(tokens: Counter, spec: Conv, w: np.ndarray, x: np.ndarray) -> Counter:
    """x is the conv input (C, H, W); tokens are (channel, y, x) output units."""
    _, h, w_in = x.shape
    k, s, p = spec.kernel, spec.stride, spec.padding
    out: Counter = Counter()
    for (co, yo, xo), mult in tokens.items():
        best_score = 0.0
        best = None
        for ty in range(k):
            yi = yo * s - p + ty
            if yi < 0 or yi >= h:
                continue
            for tx in range(k):
                xi = xo * s - p + tx
                if xi < 0 or xi >= w_in:
                    continue
                contrib = w[co, :, ty, tx] * x[:, yi, xi]
                score = float(np.maximum(contrib, 0.0).sum())
                if score > best_score:
                    best_score = score
                    best = (yi, xi, int(contrib.argmax()))
        if best is not None:
            yi, xi, ci = best
            out[(ci, yi, xi)] += mult
    return out


def backtrack_fixations(model: CnnModel, patch: Patch | np.ndarray,
                        cfg: HeatmapConfig = HeatmapConfig()) -> FixationSet:
    """Locate the input pixels responsible for the patch's predicted class."""
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch)
    patch_id = patch.source_scan_id if isinstance(patch, Patch) else "patch"
    x = pixels.astype(model.dtype) / 255
    probs, acts = model.forward_batch(x[None], retain=True)
    predicted = int(probs[0].argmax())

    # tokens: Counter of int (flat stages) or (channel, y, x) (map stages)
    tokens: Counter = Counter({predicted: 1})
    for i in range(len(model.specs) - 1, -1, -1):
        spec = model.specs[i]
        inp = acts[i][0]  # layer input, batch stripped
        if isinstance(spec, Softmax):
            continue
        if isinstance(spec, FullyConnected):
            tokens = _fc_step(tokens, model.params[i]["w"], inp, cfg.top_k_fc)
        elif isinstance(spec, ReLU):
            if inp.ndim == 1:
                tokens = Counter({t: m for t, m in tokens.items() if inp[t] > 0})
            else:
                tokens = Counter(
                    {t: m for t, m in tokens.items() if inp[t[0], t[1], t[2]] > 0}
                )
        elif isinstance(spec, Flatten):
            c, h, w = inp.shape
            unr = {
                tuple(int(v) for v in np.unravel_index(t, (c, h, w))): m
                for t, m in tokens.items()
            }
            tokens = Counter()
            for key, m in unr.items():
                tokens[key] += m
        elif isinstance(spec, MaxPool):
            k, s = spec.kernel, spec.stride
            moved: Counter = Counter()
            for (c, y, xx), m in tokens.items():
                window = inp[c, y * s : y * s + k, xx * s : xx * s + k]
                wy, wx = np.unravel_index(int(window.argmax()), window.shape)
                moved[(c, y * s + int(wy), xx * s + int(wx))] += m
            tokens = moved
        elif isinstance(spec, Conv):
            tokens = _conv_step(tokens, spec, model.params[i]["w"], inp)
        if not tokens:
            break

    points = sorted((y, xx) for (_, y, xx) in tokens)
    weights = tuple(tokens[(0, y, xx)] for (y, xx) in points) if tokens else ()
    # tokens at the input always carry channel 0 (grayscale input)
    label = Label.PA if predicted == 1 else Label.BONAFIDE
    return FixationSet(
        points=tuple(points), weights=weights, predicted_class=label, patch_id=patch_id
    )


def fixation_heatmap(fix: FixationSet, shape: tuple[int, int],
                     cfg: HeatmapConfig = HeatmapConfig()) -> np.ndarray:
    """Density map: sum of Gaussian kernels at the fixation points, scaled so
    the maximum equals 255.  Returns a uint8 grid of the given shape."""
    if not fix.points:
        raise DataError("no fixations")
    h, w = shape
    acc = np.zeros((h, w), dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    two_s2 = 2.0 * cfg.kde_sigma * cfg.kde_sigma
    for (y, x), wt in zip(fix.points, fix.weights):
        gy = np.exp(-((rows - y) ** 2) / two_s2)
        gx = np.exp(-((cols - x) ** 2) / two_s2)
        acc += wt * np.outer(gy, gx)
    out = np.floor(255.0 * acc / acc.max() + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8)


def fixations_to_csv(fix: FixationSet) -> str:
    """Points as ``row,col,weight`` lines with a header."""
    lines = ["row,col,weight"]
    for (y, x), wt in zip(fix.points, fix.weights):
        lines.append(f"{y},{x},{wt}")
    return "\n".join(lines) + "\n"
