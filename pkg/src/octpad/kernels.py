"""Backend selection for the hot image kernel.

The compiled Cython kernel is used when its extension module imported
successfully; otherwise the pure-numpy fallback takes over.  Both produce
bit-identical results; the compiled one is roughly an order of magnitude
faster (see ``benchmarks/bench_nlm.py``).

Set ``OCTPAD_PURE_PYTHON=1`` to force the fallback (mainly for benchmarks and
tests).
"""

from __future__ import annotations

import os

import numpy as np

from octpad import _nlm_py
from octpad.errors import ConfigError

try:
    from octpad import _nlm_c
except ImportError:  # pragma: no cover - depends on build environment
    _nlm_c = None

HAVE_COMPILED = _nlm_c is not None

if os.environ.get("OCTPAD_PURE_PYTHON", "0") not in ("", "0"):
    BACKEND = "python"
else:
    BACKEND = "compiled" if HAVE_COMPILED else "python"


def nlm_denoise_padded(padded: np.ndarray, height: int, width: int,
                       template_radius: int, search_radius: int, h: float,
                       backend: str | None = None) -> np.ndarray:
    """Dispatch to the selected backend (``None`` means the import-time pick)."""
    chosen = backend or BACKEND
    if chosen == "compiled":
        if not HAVE_COMPILED:
            raise ConfigError("compiled kernel requested but not built")
        return _nlm_c.nlm_denoise_padded(
            np.ascontiguousarray(padded), height, width, template_radius, search_radius, h
        )
    if chosen == "python":
        return _nlm_py.nlm_denoise_padded(
            padded, height, width, template_radius, search_radius, h
        )
    raise ConfigError(f"unknown kernel backend {chosen!r}")
