"""Training loop: RMSProp over shuffled mini-batches with exponential
learning-rate decay and optional augmentation.

Determinism: weight init, epoch shuffles, and augmentation draws all derive
from the config seed in a fixed consumption order, so a rerun with the same
seed and data produces a bit-identical model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from octpad.cnn.layers import softmax_cross_entropy
from octpad.cnn.model import CnnModel
from octpad.errors import ConfigError, TrainingError

CROP_FRACTION = 0.9  # 135x135 on standard 150-px patches
BRIGHTNESS_RANGE = (0.8, 1.2)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    lr_start: float = 0.01
    lr_end: float = 0.0001
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-8
    seed: int = 0
    augment: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (0 < self.lr_end <= self.lr_start):
            raise ConfigError("need 0 < lr_end <= lr_start")
        if not (0 < self.rmsprop_rho < 1):
            raise ConfigError("rmsprop_rho must be in (0, 1)")
        if self.rmsprop_eps <= 0:
            raise ConfigError("rmsprop_eps must be positive")


def lr_schedule(step: int, total: int, lr_start: float = 0.01,
                lr_end: float = 0.0001) -> float:
    """Exponential decay from lr_start (step 0) to lr_end (step ``total``)."""
    if total < 1:
        raise ConfigError("lr_schedule needs total >= 1")
    if not 0 <= step <= total:
        raise ConfigError(f"step {step} outside [0, {total}]")
    return float(lr_start * (lr_end / lr_start) ** (step / total))


def rmsprop_step(params, grads, state, lr: float, rho: float = 0.9,
                 eps: float = 1e-8):
    """One RMSProp update; pure function of its inputs.

    ``params``/``grads``/``state`` are matching lists of arrays (or single
    arrays).  Returns (new_params, new_state).
    """
    single = isinstance(params, np.ndarray)
    ps = [params] if single else list(params)
    gs = [grads] if single else list(grads)
    vs = [state] if single else list(state)
    if not (len(ps) == len(gs) == len(vs)):
        raise ConfigError("params/grads/state lengths differ")
    new_p, new_v = [], []
    for p, g, v in zip(ps, gs, vs):
        if p.shape != g.shape or p.shape != v.shape:
            raise ConfigError("params/grads/state shapes differ")
        if not np.isfinite(g).all():
            raise TrainingError("divergence: non-finite gradient")
        v2 = rho * v + (1.0 - rho) * g * g
        new_v.append(v2)
        new_p.append(p - lr * g / (np.sqrt(v2) + eps))
    if single:
        return new_p[0], new_v[0]
    return new_p, new_v


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resampling of a 2-D array."""
    h, w = img.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    tl = img[np.ix_(y0, x0)]
    tr = img[np.ix_(y0, x1)]
    bl = img[np.ix_(y1, x0)]
    br = img[np.ix_(y1, x1)]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return top + (bot - top) * fy


def augment_patch(patch01: np.ndarray, rng) -> np.ndarray:
    """Randomized patch transform on a [0, 1] float image.

    Draw order (fixed for reproducibility): horizontal flip (p=0.5), vertical
    flip (p=0.5), crop offsets, brightness factor.  The crop goes to
    135x135 and is resized back bilinearly; brightness scales by a uniform
    factor in [0.8, 1.2] before clipping to [0, 1].
    """
    h, w = patch01.shape
    out = patch01
    if rng.random() < 0.5:
        out = out[:, ::-1]
    if rng.random() < 0.5:
        out = out[::-1, :]
    ch = max(1, round(h * CROP_FRACTION))
    cw = max(1, round(w * CROP_FRACTION))
    oy = int(rng.integers(0, h - ch + 1))
    ox = int(rng.integers(0, w - cw + 1))
    out = bilinear_resize(out[oy : oy + ch, ox : ox + cw], h, w)
    factor = rng.uniform(*BRIGHTNESS_RANGE)
    return np.clip(out * factor, 0.0, 1.0)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def _flatten_params(grads_or_params):
    out = []
    for p in grads_or_params:
        if p is not None:
            out.extend([p["w"], p["b"]])
    return out


def _unflatten_into(model: CnnModel, flat) -> None:
    it = iter(flat)
    for p in model.params:
        if p is not None:
            p["w"] = next(it)
            p["b"] = next(it)


def train(patches: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
          arch=None, input_shape=(150, 150, 1),
          dtype=np.float32) -> tuple[CnnModel, list[EpochStats]]:
    """Fit the classifier on uint8 patches with integer labels (0=bonafide,
    1=pa).  Returns the trained model and per-epoch loss/accuracy history.

    Loss is mean 2-class cross-entropy; accuracy is the running training
    accuracy over the epoch's (possibly augmented) batches.
    """
    patches = np.asarray(patches)
    labels = np.asarray(labels, dtype=np.int64)
    if patches.ndim != 3 or patches.shape[0] != labels.shape[0]:
        raise TrainingError("patches must be (N, H, W) aligned with labels")
    n = patches.shape[0]
    if n < 1:
        raise TrainingError("empty dataset")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise TrainingError("single-class dataset: need both bonafide and PA patches")

    # init and the shuffle/augment stream are separate so they never share draws
    model = CnnModel.build(arch, input_shape=input_shape, seed=cfg.seed, dtype=dtype)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])

    flat = _flatten_params(model.params)
    state = [np.zeros_like(t) for t in flat]
    batches_per_epoch = -(-n // cfg.batch_size)
    total_updates = cfg.epochs * batches_per_epoch
    lr_total = max(total_updates - 1, 1)

    history: list[EpochStats] = []
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        losses = []
        correct = 0
        for b in range(batches_per_epoch):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            x = patches[idx].astype(dtype) / 255
            if cfg.augment:
                x = np.stack([augment_patch(xi, rng) for xi in x]).astype(dtype)
            y = labels[idx]
            logits, caches = model.forward_train(x[:, None, :, :])
            loss, probs, dlogits = softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise TrainingError("divergence: non-finite loss")
            losses.append(loss)
            correct += int((probs.argmax(axis=1) == y).sum())
            grads = model.backward(dlogits.astype(dtype), caches)
            flat_g = _flatten_params(grads)
            lr = lr_schedule(step, lr_total, cfg.lr_start, cfg.lr_end)
            flat, state = rmsprop_step(flat, flat_g, state, lr,
                                       cfg.rmsprop_rho, cfg.rmsprop_eps)
            _unflatten_into(model, flat)
            step += 1
        history.append(EpochStats(epoch, float(np.mean(losses)), correct / n))
    return model, history
