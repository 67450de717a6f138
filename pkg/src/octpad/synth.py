"""Synthetic B-scan phantoms for training and testing without real captures.

Bonafide phantoms show a layered skin profile: a bright undulating surface
band (stratum corneum), a parallel second band deeper down (papillary
junction), and optional helical duct curves between them.  Presentation
attack phantoms lack the layered anatomy: either a single surface band over
structureless decaying texture, or two closely spaced thin bands (thin
overlay signature).  Additive Gaussian speckle is applied last.

Generation is a pure function of (parameters, seed); the same inputs always
produce byte-identical images.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from octpad.errors import ConfigError, DataError
from octpad.imagecore import BScan, Label, ScanRecord, save_image, write_manifest

_BACKGROUND = 8.0
_SURFACE_THICKNESS = 9
_JUNCTION_THICKNESS = 7
_THIN_THICKNESS = 5
_THIN_GAP = 12
_DECAY_TAU = 30.0
_DECAY_AMP = 0.18


class PaMode(Enum):
    """Structure of a presentation-attack phantom."""

    NONE = "none"
    HOMOGENEOUS = "homogeneous"
    DOUBLE_LAYER_THIN = "double_layer_thin"


@dataclass(frozen=True)
class PhantomParams:
    height: int = 200
    width: int = 330
    surface_depth_mean: int = 55
    surface_amplitude: int = 10
    junction_offset_mean: int = 40
    band_brightness: float = 200.0
    speckle_sigma: float = 5.0
    duct_count: int = 2
    pa_mode: PaMode = PaMode.NONE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ConfigError("phantom dimensions must be positive")
        if self.surface_depth_mean + self.junction_offset_mean + 100 >= self.height:
            raise ConfigError(
                "surface_depth_mean + junction_offset_mean + 100 must be < height "
                "(a patch must fit below the candidate)"
            )
        if not self.band_brightness > 3 * self.speckle_sigma:
            raise ConfigError("band_brightness must exceed 3 * speckle_sigma")
        if self.surface_amplitude < 0 or self.junction_offset_mean < 0:
            raise ConfigError("amplitudes and offsets must be non-negative")
        if self.speckle_sigma < 0:
            raise ConfigError("speckle_sigma must be non-negative")
        if self.duct_count < 0:
            raise ConfigError("duct_count must be non-negative")


@dataclass(frozen=True)
class PhantomTruth:
    """Ground-truth geometry of a generated phantom (for verification)."""

    surface_center: np.ndarray
    junction_center: np.ndarray | None
    band_mask: np.ndarray
    surface_thickness: int
    junction_thickness: int


def _draw_band(img: np.ndarray, mask: np.ndarray, center: np.ndarray,
               thickness: int, brightness: np.ndarray) -> None:
    """Paint a horizontal band of exactly ``thickness`` rows per column."""
    half = thickness // 2
    rows = np.arange(img.shape[0])[:, None]
    band = np.abs(rows - center[None, :]) <= half
    img[band] = np.broadcast_to(brightness[None, :], img.shape)[band]
    mask |= band


def generate_phantom(params: PhantomParams, label: Label) -> tuple[np.ndarray, PhantomTruth]:
    """Render one phantom; returns (uint8 pixels, ground truth geometry)."""
    if label is Label.BONAFIDE and params.pa_mode is not PaMode.NONE:
        raise ConfigError("bonafide phantoms must use pa_mode NONE")
    if label is Label.PA and params.pa_mode is PaMode.NONE:
        raise ConfigError("PA phantoms need a pa_mode")

    h, w = params.height, params.width
    rng = np.random.default_rng(np.uint64(params.seed))
    img = np.full((h, w), _BACKGROUND, dtype=np.float64)
    band_mask = np.zeros((h, w), dtype=bool)

    x = np.arange(w)
    ph1, ph2 = rng.uniform(0.0, 2.0 * np.pi, size=2)
    ridge = 0.65 * np.sin(2.0 * np.pi * 2.0 * x / w + ph1) + 0.35 * np.sin(
        2.0 * np.pi * 5.0 * x / w + ph2
    )
    surface = np.rint(params.surface_depth_mean + params.surface_amplitude * ridge).astype(int)
    surface = np.clip(surface, _SURFACE_THICKNESS, h - 1 - _SURFACE_THICKNESS)
    jitter = rng.uniform(0.95, 1.05, size=w)
    bb = params.band_brightness

    junction: np.ndarray | None = None
    if label is Label.BONAFIDE:
        junction = surface + params.junction_offset_mean
        # helical duct curves crossing the epidermis between the two bands
        for _ in range(params.duct_count):
            cx = rng.uniform(10.0, w - 10.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            y0 = int(surface[int(cx)]) + _SURFACE_THICKNESS // 2 + 2
            y1 = int(junction[int(cx)]) - _JUNCTION_THICKNESS // 2 - 1
            for y in range(y0, y1):
                cxy = int(round(cx + 3.0 * np.sin(2.0 * np.pi * (y - y0) / 12.0 + phase)))
                for c in (cxy, cxy + 1):
                    if 0 <= c < w:
                        img[y, c] = 0.7 * bb
                        band_mask[y, c] = True
        _draw_band(img, band_mask, surface, _SURFACE_THICKNESS, bb * jitter)
        _draw_band(img, band_mask, junction, _JUNCTION_THICKNESS, 0.9 * bb * jitter)
    elif params.pa_mode is PaMode.HOMOGENEOUS:
        # structureless material: one surface band over decaying texture
        rows = np.arange(h)[:, None]
        depth = rows - surface[None, :]
        below = depth > _SURFACE_THICKNESS // 2
        decay = _DECAY_AMP * bb * np.exp(-np.maximum(depth, 0) / _DECAY_TAU)
        texture = rng.uniform(0.7, 1.3, size=(h, w))
        img = np.where(below, _BACKGROUND + decay * texture, img)
        _draw_band(img, band_mask, surface, _SURFACE_THICKNESS, bb * jitter)
    else:  # PaMode.DOUBLE_LAYER_THIN
        rows = np.arange(h)[:, None]
        depth = rows - (surface[None, :] + _THIN_GAP)
        below = depth > _THIN_THICKNESS // 2
        decay = 0.5 * _DECAY_AMP * bb * np.exp(-np.maximum(depth, 0) / _DECAY_TAU)
        texture = rng.uniform(0.7, 1.3, size=(h, w))
        img = np.where(below, _BACKGROUND + decay * texture, img)
        _draw_band(img, band_mask, surface, _THIN_THICKNESS, bb * jitter)
        _draw_band(img, band_mask, surface + _THIN_GAP, _THIN_THICKNESS, 0.95 * bb * jitter)

    if params.speckle_sigma > 0:
        img = img + rng.normal(0.0, params.speckle_sigma, size=(h, w))
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    truth = PhantomTruth(
        surface_center=surface,
        junction_center=junction,
        band_mask=band_mask,
        surface_thickness=_SURFACE_THICKNESS,
        junction_thickness=_JUNCTION_THICKNESS,
    )
    return pixels, truth


def generate_scan(params: PhantomParams, label: Label, scan_id: str = "synthetic",
                  material: str | None = None) -> BScan:
    pixels, _ = generate_phantom(params, label)
    return BScan(scan_id=scan_id, pixels=pixels, label=label, material=material)


@dataclass(frozen=True)
class MaterialPreset:
    pa_mode: PaMode
    brightness_scale: float


MATERIAL_PRESETS: dict[str, MaterialPreset] = {
    "ballistic_gelatin": MaterialPreset(PaMode.HOMOGENEOUS, 0.95),
    "clear_ecoflex": MaterialPreset(PaMode.DOUBLE_LAYER_THIN, 0.80),
    "tan_ecoflex": MaterialPreset(PaMode.HOMOGENEOUS, 1.05),
    "yellow_pigmented_silicone": MaterialPreset(PaMode.HOMOGENEOUS, 1.10),
    "flesh_pigmented_ecoflex": MaterialPreset(PaMode.HOMOGENEOUS, 0.90),
    "nusil_conductive_silicone": MaterialPreset(PaMode.HOMOGENEOUS, 1.00),
    "flesh_pigmented_pdms": MaterialPreset(PaMode.DOUBLE_LAYER_THIN, 1.00),
    "elmers_glue": MaterialPreset(PaMode.DOUBLE_LAYER_THIN, 0.85),
}

DEFAULT_MATERIALS: tuple[str, ...] = tuple(MATERIAL_PRESETS)


def _preset_for(material: str) -> MaterialPreset:
    preset = MATERIAL_PRESETS.get(material)
    if preset is not None:
        return preset
    # unknown tags get a stable perturbation derived from the name
    crc = zlib.crc32(material.encode("utf-8"))
    mode = PaMode.HOMOGENEOUS if crc & 1 else PaMode.DOUBLE_LAYER_THIN
    return MaterialPreset(mode, 0.85 + 0.25 * ((crc >> 1) % 1000) / 999.0)


def generate_corpus(n_bonafide: int, n_pa: int,
                    materials: tuple[str, ...] = DEFAULT_MATERIALS,
                    base_params: PhantomParams = PhantomParams(),
                    out_dir: str | Path = "corpus",
                    corpus_seed: int = 7,
                    image_format: str = "png") -> Path:
    """Write a labeled corpus of phantom images plus its manifest.

    PA scans cycle through ``materials`` (each tag maps to a fixed parameter
    perturbation); per-scan seeds derive deterministically from the corpus
    seed, so regeneration reproduces identical bytes.  Returns the manifest
    path.
    """
    if n_bonafide < 0 or n_pa < 0:
        raise ConfigError("scan counts must be non-negative")
    if n_pa < len(materials):
        raise ConfigError(
            f"n_pa ({n_pa}) must be at least the number of materials ({len(materials)})"
        )
    if image_format not in ("png", "pgm"):
        raise ConfigError(f"unsupported image format {image_format!r}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"unwritable out_dir {out_dir}: {exc}") from exc

    seeds = np.random.SeedSequence(corpus_seed).generate_state(
        n_bonafide + n_pa, dtype=np.uint64
    )
    records: list[ScanRecord] = []
    rel_records: list[ScanRecord] = []
    for i in range(n_bonafide):
        scan_id = f"bona_{i:05d}"
        params = replace(base_params, seed=int(seeds[i]), pa_mode=PaMode.NONE)
        pixels, _ = generate_phantom(params, Label.BONAFIDE)
        name = f"{scan_id}.{image_format}"
        save_image(pixels, out_dir / name)
        rel_records.append(ScanRecord(Path(name), scan_id, Label.BONAFIDE))
        records.append(ScanRecord(out_dir / name, scan_id, Label.BONAFIDE))
    for i in range(n_pa):
        material = materials[i % len(materials)]
        preset = _preset_for(material)
        scan_id = f"pa_{i:05d}"
        params = replace(
            base_params,
            seed=int(seeds[n_bonafide + i]),
            pa_mode=preset.pa_mode,
            band_brightness=base_params.band_brightness * preset.brightness_scale,
        )
        pixels, _ = generate_phantom(params, Label.PA)
        name = f"{scan_id}.{image_format}"
        save_image(pixels, out_dir / name)
        rel_records.append(ScanRecord(Path(name), scan_id, Label.PA, material=material))
        records.append(ScanRecord(out_dir / name, scan_id, Label.PA, material=material))

    manifest = out_dir / "manifest.jsonl"
    write_manifest(rel_records, manifest)
    return manifest
