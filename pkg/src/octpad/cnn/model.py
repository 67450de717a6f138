"""Patch classifier model: layer descriptors, execution, and checkpoints.

A model is an ordered list of layer descriptors plus per-layer weight
tensors.  The final layer must be a 2-unit softmax; the PA-class probability
of a patch is its spoofness score.  Descriptors keep the backbone pluggable:
any conv/pool/fc stack that composes to two classes is valid.

Checkpoint format (little-endian):

    magic "OPAD" | version u32 | header length u32 | header JSON (UTF-8)
    | weight tensors, contiguous floats in descriptor order (w then b)

The header JSON records the architecture, input shape, dtype, seed, and the
input normalization tag.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from octpad.cnn import layers as L
from octpad.errors import CheckpointError, ConfigError
from octpad.patches import Patch

CHECKPOINT_MAGIC = b"OPAD"
CHECKPOINT_VERSION = 1
NORMALIZATION = "scale_1_255"


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    kernel: int
    stride: int


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class FullyConnected:
    out_units: int


@dataclass(frozen=True)
class Softmax:
    pass


LayerSpec = Conv | ReLU | MaxPool | Flatten | FullyConnected | Softmax

_SPEC_TYPES = {
    "conv": Conv,
    "relu": ReLU,
    "maxpool": MaxPool,
    "flatten": Flatten,
    "fc": FullyConnected,
    "softmax": Softmax,
}
_SPEC_NAMES = {cls: name for name, cls in _SPEC_TYPES.items()}


def spec_to_dict(spec: LayerSpec) -> dict:
    d = {"type": _SPEC_NAMES[type(spec)]}
    d.update(asdict(spec))
    return d


def spec_from_dict(d: dict) -> LayerSpec:
    kind = d.get("type")
    if kind not in _SPEC_TYPES:
        raise CheckpointError(f"unknown layer type {kind!r}")
    kwargs = {k: v for k, v in d.items() if k != "type"}
    return _SPEC_TYPES[kind](**kwargs)


def default_patch_cnn() -> tuple[LayerSpec, ...]:
    """Compact backbone for 150x150 grayscale patches."""
    return (
        Conv(8, 3, 1, 1), ReLU(), MaxPool(2, 2),
        Conv(16, 3, 1, 1), ReLU(), MaxPool(2, 2),
        Conv(32, 3, 1, 1), ReLU(), MaxPool(2, 2),
        Flatten(),
        FullyConnected(64), ReLU(),
        FullyConnected(2), Softmax(),
    )


def _infer_shapes(specs, input_shape):
    """Walk the descriptor list, returning each layer's input shape.

    Shapes are (C, H, W) tuples for feature maps and ints after flattening.
    Raises if consecutive layers do not compose or the output is not 2 units.
    """
    h, w, c = input_shape
    shape: tuple | int = (c, h, w)
    shapes = []
    for i, spec in enumerate(specs):
        shapes.append(shape)
        if isinstance(spec, Conv):
            if not isinstance(shape, tuple):
                raise ConfigError(f"layer {i}: conv needs a feature-map input")
            ci, hi, wi = shape
            ho = (hi + 2 * spec.padding - spec.kernel) // spec.stride + 1
            wo = (wi + 2 * spec.padding - spec.kernel) // spec.stride + 1
            if ho < 1 or wo < 1:
                raise ConfigError(f"layer {i}: conv output collapses to zero")
            shape = (spec.out_channels, ho, wo)
        elif isinstance(spec, MaxPool):
            if not isinstance(shape, tuple):
                raise ConfigError(f"layer {i}: maxpool needs a feature-map input")
            ci, hi, wi = shape
            ho = (hi - spec.kernel) // spec.stride + 1
            wo = (wi - spec.kernel) // spec.stride + 1
            if ho < 1 or wo < 1:
                raise ConfigError(f"layer {i}: pool output collapses to zero")
            shape = (ci, ho, wo)
        elif isinstance(spec, Flatten):
            if not isinstance(shape, tuple):
                raise ConfigError(f"layer {i}: flatten needs a feature-map input")
            shape = int(np.prod(shape))
        elif isinstance(spec, FullyConnected):
            if not isinstance(shape, int):
                raise ConfigError(f"layer {i}: fc needs a flat input")
            shape = spec.out_units
        elif isinstance(spec, (ReLU, Softmax)):
            pass
        else:
            raise ConfigError(f"layer {i}: unknown spec {spec!r}")
    shapes.append(shape)
    if not isinstance(specs[-1], Softmax) or shape != 2:
        raise ConfigError("final layer must be a 2-unit softmax")
    return shapes


class CnnModel:
    """Layer descriptors + weights; produces 2-class probabilities."""

    def __init__(self, specs, input_shape, params, seed: int, dtype=np.float32):
        self.specs = tuple(specs)
        self.input_shape = tuple(input_shape)
        self.params = params  # list aligned with specs; None for weightless layers
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.shapes = _infer_shapes(self.specs, self.input_shape)
        for p in self.params:
            if p is not None and not all(np.isfinite(t).all() for t in p.values()):
                raise ConfigError("model weights must be finite")

    @classmethod
    def build(cls, specs=None, input_shape=(150, 150, 1), seed: int = 0,
              dtype=np.float32) -> "CnnModel":
        """Initialize weights from a seeded uniform scaled by fan-in."""
        specs = tuple(specs) if specs is not None else default_patch_cnn()
        shapes = _infer_shapes(specs, input_shape)
        rng = np.random.default_rng(seed)
        dtype = np.dtype(dtype)
        params: list[dict | None] = []
        for spec, in_shape in zip(specs, shapes):
            if isinstance(spec, Conv):
                ci = in_shape[0]
                fan_in = ci * spec.kernel * spec.kernel
                a = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-a, a, size=(spec.out_channels, ci, spec.kernel, spec.kernel))
                params.append({"w": w.astype(dtype), "b": np.zeros(spec.out_channels, dtype)})
            elif isinstance(spec, FullyConnected):
                fan_in = in_shape
                a = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-a, a, size=(spec.out_units, fan_in))
                params.append({"w": w.astype(dtype), "b": np.zeros(spec.out_units, dtype)})
            else:
                params.append(None)
        return cls(specs, input_shape, params, seed=seed, dtype=dtype)

    # -- execution -----------------------------------------------------

    def _check_batch(self, x: np.ndarray) -> np.ndarray:
        h, w, c = self.input_shape
        if x.ndim == 3:  # (N, H, W) single-channel
            x = x[:, None, :, :]
        if x.shape[1:] != (c, h, w):
            raise ConfigError(
                f"input shape {x.shape[1:]} does not match model input {(c, h, w)}"
            )
        return x

    def forward_batch(self, x: np.ndarray, retain: bool = False):
        """Run normalized inputs through the network.

        Returns probabilities (N, 2); with ``retain=True`` also the list of
        per-layer inputs (index i = input to layer i; final entry = output).
        """
        x = self._check_batch(np.asarray(x, dtype=self.dtype))
        acts = [x] if retain else None
        for spec, p in zip(self.specs, self.params):
            if isinstance(spec, Conv):
                x, _ = L.conv_forward(x, p["w"], p["b"], spec.stride, spec.padding)
            elif isinstance(spec, ReLU):
                x, _ = L.relu_forward(x)
            elif isinstance(spec, MaxPool):
                x, _ = L.maxpool_forward(x, spec.kernel, spec.stride)
            elif isinstance(spec, Flatten):
                x = x.reshape(x.shape[0], -1)
            elif isinstance(spec, FullyConnected):
                x, _ = L.fc_forward(x, p["w"], p["b"])
            elif isinstance(spec, Softmax):
                x = L.softmax(x)
            if retain:
                acts.append(x)
        return (x, acts) if retain else x

    def forward_train(self, x: np.ndarray):
        """Forward pass up to the logits, keeping caches for backward."""
        x = self._check_batch(x)
        caches = []
        for spec, p in zip(self.specs, self.params):
            if isinstance(spec, Conv):
                x, cache = L.conv_forward(x, p["w"], p["b"], spec.stride, spec.padding)
            elif isinstance(spec, ReLU):
                x, cache = L.relu_forward(x)
            elif isinstance(spec, MaxPool):
                x, cache = L.maxpool_forward(x, spec.kernel, spec.stride)
            elif isinstance(spec, Flatten):
                cache = x.shape
                x = x.reshape(x.shape[0], -1)
            elif isinstance(spec, FullyConnected):
                x, cache = L.fc_forward(x, p["w"], p["b"])
            elif isinstance(spec, Softmax):
                cache = None  # folded into the loss
            caches.append(cache)
        return x, caches

    def backward(self, dlogits: np.ndarray, caches):
        """Gradients of the loss w.r.t. every weight tensor (aligned with params)."""
        grads: list[dict | None] = [None] * len(self.specs)
        g = dlogits
        for i in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[i]
            if isinstance(spec, Softmax):
                continue
            if isinstance(spec, Conv):
                g, gw, gb = L.conv_backward(g, caches[i])
                grads[i] = {"w": gw, "b": gb}
            elif isinstance(spec, ReLU):
                g = L.relu_backward(g, caches[i])
            elif isinstance(spec, MaxPool):
                g = L.maxpool_backward(g, caches[i])
            elif isinstance(spec, Flatten):
                g = g.reshape(caches[i])
            elif isinstance(spec, FullyConnected):
                g, gw, gb = L.fc_backward(g, caches[i])
                grads[i] = {"w": gw, "b": gb}
        return grads

    # -- patch-level API -------------------------------------------------

    def predict_proba(self, patches_u8: np.ndarray) -> np.ndarray:
        """Probabilities for a uint8 patch stack (N, H, W); normalizes by 255."""
        x = np.asarray(patches_u8)
        if x.ndim == 2:
            x = x[None]
        return self.forward_batch(x.astype(self.dtype) / 255)

    def param_count(self) -> int:
        return sum(
            t.size for p in self.params if p is not None for t in p.values()
        )

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        header = {
            "format_version": CHECKPOINT_VERSION,
            "architecture": [spec_to_dict(s) for s in self.specs],
            "input_shape": list(self.input_shape),
            "dtype": self.dtype.name,
            "seed": self.seed,
            "normalization": NORMALIZATION,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", CHECKPOINT_VERSION))
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            le = self.dtype.newbyteorder("<")
            for p in self.params:
                if p is None:
                    continue
                f.write(np.ascontiguousarray(p["w"], dtype=le).tobytes())
                f.write(np.ascontiguousarray(p["b"], dtype=le).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "CnnModel":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
        if raw[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint")
        if len(raw) < 12:
            raise CheckpointError(f"{path}: truncated checkpoint")
        (version,) = struct.unpack("<I", raw[4:8])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", raw[8:12])
        if len(raw) < 12 + hlen:
            raise CheckpointError(f"{path}: truncated checkpoint header")
        try:
            header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt checkpoint header") from exc
        specs = tuple(spec_from_dict(d) for d in header["architecture"])
        input_shape = tuple(header["input_shape"])
        dtype = np.dtype(header["dtype"])
        shapes = _infer_shapes(specs, input_shape)
        itemsize = dtype.itemsize
        pos = 12 + hlen
        params: list[dict | None] = []
        for spec, in_shape in zip(specs, shapes):
            if isinstance(spec, Conv):
                wshape = (spec.out_channels, in_shape[0], spec.kernel, spec.kernel)
                bshape = (spec.out_channels,)
            elif isinstance(spec, FullyConnected):
                wshape = (spec.out_units, in_shape)
                bshape = (spec.out_units,)
            else:
                params.append(None)
                continue
            nbytes = (int(np.prod(wshape)) + bshape[0]) * itemsize
            if pos + nbytes > len(raw):
                raise CheckpointError(f"{path}: truncated checkpoint weights")
            le = dtype.newbyteorder("<")
            w = np.frombuffer(
                raw, dtype=le, count=int(np.prod(wshape)), offset=pos
            ).reshape(wshape).astype(dtype)
            pos += int(np.prod(wshape)) * itemsize
            b = np.frombuffer(raw, dtype=le, count=bshape[0], offset=pos).astype(dtype)
            pos += bshape[0] * itemsize
            params.append({"w": w, "b": b})
        if pos != len(raw):
            raise CheckpointError(f"{path}: trailing bytes in checkpoint")
        return cls(specs, input_shape, params, seed=header.get("seed", 0), dtype=dtype)


def _patch_pixels(patch: Patch | np.ndarray) -> np.ndarray:
    return patch.pixels if isinstance(patch, Patch) else np.asarray(patch)


def forward(model: CnnModel, patch: Patch | np.ndarray) -> np.ndarray:
    """Class probabilities (bonafide, pa) for one patch."""
    return model.predict_proba(_patch_pixels(patch))[0]


def spoofness(model: CnnModel, patch: Patch | np.ndarray) -> float:
    """PA-class probability of one patch, in [0, 1]."""
    return float(forward(model, patch)[1])


def spoofness_batch(model: CnnModel, patches_u8: np.ndarray) -> np.ndarray:
    return model.predict_proba(patches_u8)[:, 1]
