"""Run configuration: JSON config files, flag overrides, and provenance.

A config file is a single JSON object with one section per concern::

    {"preprocess": {"h": 20.0}, "patches": {"stride": 30},
     "train": {"batch_size": 32}, "heatmap": {"kde_sigma": 5.0},
     "eval": {"k": 5, "fdr_max": 0.002}}

Unknown sections or keys are rejected.  Command-line flags win over config
file values, which win over built-in defaults.  The resolved configuration is
echoed into every output directory as ``run_config.json``.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from octpad.cnn.train import TrainConfig
from octpad.errors import ConfigError
from octpad.fixations import HeatmapConfig
from octpad.patches import PatchConfig
from octpad.preprocess import PreprocessConfig


@dataclass(frozen=True)
class EvalParams:
    k: int = 5
    fdr_max: float = 0.002
    train_patches_per_scan: int = 4

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if not 0 <= self.fdr_max <= 1:
            raise ConfigError("fdr_max must be in [0, 1]")
        if self.train_patches_per_scan < 0:
            raise ConfigError("train_patches_per_scan must be >= 0 (0 = all)")


SECTIONS = {
    "preprocess": PreprocessConfig,
    "patches": PatchConfig,
    "train": TrainConfig,
    "heatmap": HeatmapConfig,
    "eval": EvalParams,
}


def load_config_file(path: str | Path | None) -> dict:
    """Load and validate a config file; returns {} when path is None."""
    if path is None:
        return {}
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"unreadable config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    for section, values in obj.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        known = {f.name for f in fields(SECTIONS[section])}
        for key in values:
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key!r} in config")
    return obj


def resolve_section(section: str, file_cfg: dict, overrides: dict):
    """Construct a section's dataclass from defaults <- file <- flags."""
    cls = SECTIONS[section]
    kwargs = dict(file_cfg.get(section, {}))
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


def write_provenance(out_dir: str | Path, command: str, sections: dict,
                     extras: dict | None = None) -> None:
    """Echo the resolved configuration next to a command's outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "argv": sys.argv[1:],
    }
    for name, cfg in sections.items():
        payload[name] = asdict(cfg) if not isinstance(cfg, dict) else cfg
    if extras:
        payload.update(extras)
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, indent=2, default=str) + "\n"
    )
