"""Core image/label types, grayscale image I/O, and dataset manifests.

Images are 8-bit grayscale, stored as row-major numpy ``uint8`` arrays.
Two lossless file formats are supported: binary PGM ("P5", maxval 255) and
8-bit grayscale PNG.  Dataset manifests are UTF-8 JSON-lines files with one
record per scan::

    {"path": "scan_00001.png", "scan_id": "scan_00001", "label": "bonafide",
     "material": null, "subject_id": null}

Labels live in the manifest, not in the image files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from octpad.errors import ImageFormatError, ManifestError

# Canonical full-size B-scan dimensions produced by the target scanner.
CANONICAL_HEIGHT = 1024
CANONICAL_WIDTH = 1900


class Label(Enum):
    """Ground-truth class of a scan: genuine finger or presentation attack."""

    BONAFIDE = "bonafide"
    PA = "pa"

    @classmethod
    def parse(cls, text: str) -> "Label":
        for member in cls:
            if member.value == text:
                return member
        raise ManifestError(f"unknown label {text!r} (expected 'bonafide' or 'pa')")


@dataclass(frozen=True)
class BScan:
    """One grayscale cross-sectional OCT image plus metadata.

    ``pixels`` is a read-only ``uint8`` array of shape ``(height, width)``.
    ``label`` is ``None`` for scans loaded without a manifest entry; stages
    that need ground truth reject unlabeled scans.
    """

    scan_id: str
    pixels: np.ndarray
    label: Label | None = None
    material: str | None = None
    subject_id: str | None = None

    def __post_init__(self) -> None:
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.ndim != 2 or px.dtype != np.uint8:
            raise ImageFormatError("pixels must be a 2-D uint8 array")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ImageFormatError("zero-sized image")
        px.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


# A binary mask is a plain boolean array with the same shape as its source
# image; no wrapper type is needed.
BinaryMask = np.ndarray


@dataclass(frozen=True)
class ScanRecord:
    """One manifest entry."""

    path: Path
    scan_id: str
    label: Label
    material: str | None = None
    subject_id: str | None = None


def load_scan(path: str | Path, record: ScanRecord | None = None) -> BScan:
    """Load a grayscale image file as a :class:`BScan`.

    The file format is sniffed from the leading bytes (PGM "P5" or PNG
    signature), not the extension.  Label/material/subject metadata come from
    ``record`` when given; otherwise the scan is unlabeled and the scan id
    defaults to the file stem.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"unreadable file {path}: {exc}") from exc
    if raw.startswith(b"P5"):
        pixels = _decode_pgm(raw, path)
    elif raw.startswith(b"\x89PNG\r\n\x1a\n"):
        pixels = _decode_png(path)
    else:
        raise ImageFormatError(f"malformed image {path}: unknown format")
    if pixels.size == 0:
        raise ImageFormatError(f"zero-sized image {path}")
    if record is not None:
        return BScan(
            scan_id=record.scan_id,
            pixels=pixels,
            label=record.label,
            material=record.material,
            subject_id=record.subject_id,
        )
    return BScan(scan_id=path.stem, pixels=pixels)


def save_image(pixels: np.ndarray, path: str | Path) -> None:
    """Write an 8-bit grayscale image; format chosen by extension (.pgm/.png).

    Round trip through :func:`load_scan` is bit-exact.
    """
    path = Path(path)
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ImageFormatError("image must be 2-D")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ImageFormatError("image dtype must be integer in [0, 255]")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ImageFormatError("pixel values out of [0, 255]")
        arr = arr.astype(np.uint8)
    suffix = path.suffix.lower()
    try:
        if suffix == ".pgm":
            header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
            path.write_bytes(header + arr.tobytes())
        elif suffix == ".png":
            Image.fromarray(arr, mode="L").save(path, format="PNG")
        else:
            raise ImageFormatError(f"unsupported image extension {suffix!r}")
    except OSError as exc:
        raise ImageFormatError(f"unwritable path {path}: {exc}") from exc


def _decode_pgm(raw: bytes, path: Path) -> np.ndarray:
    """Decode a binary PGM (P5) payload."""
    pos = 2  # after magic
    fields: list[int] = []
    while len(fields) < 3:
        # skip whitespace and '#' comment lines between header tokens
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token.isdigit():
            raise ImageFormatError(f"malformed image {path}: bad PGM header")
        fields.append(int(token))
    if pos >= len(raw):
        raise ImageFormatError(f"malformed image {path}: truncated PGM header")
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported bit depth in {path}: maxval {maxval}")
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"zero-sized image {path}")
    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise ImageFormatError(f"malformed image {path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def _decode_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise ImageFormatError(
                    f"unsupported bit depth in {path}: PNG mode {im.mode!r} (need 8-bit gray)"
                )
            return np.asarray(im, dtype=np.uint8).copy()
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"malformed image {path}") from exc
    except OSError as exc:
        raise ImageFormatError(f"malformed image {path}: {exc}") from exc


_MANIFEST_KEYS = ("path", "scan_id", "label", "material", "subject_id")


def parse_manifest(path: str | Path) -> list[ScanRecord]:
    """Parse a JSON-lines manifest into records, preserving file order.

    Relative record paths are resolved against the manifest's directory so a
    corpus directory stays relocatable.
    """
    path = Path(path)
    base = path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"unreadable manifest {path}: {exc}") from exc
    records: list[ScanRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ManifestError(f"{path}:{lineno}: record must be a JSON object")
        for key in ("path", "scan_id", "label"):
            if key not in obj:
                raise ManifestError(f"{path}:{lineno}: missing required key {key!r}")
        scan_id = obj["scan_id"]
        if not isinstance(scan_id, str) or not scan_id:
            raise ManifestError(f"{path}:{lineno}: scan_id must be a non-empty string")
        if scan_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate scan_id {scan_id!r}")
        seen.add(scan_id)
        try:
            label = Label.parse(obj["label"])
        except ManifestError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
        rec_path = Path(obj["path"])
        if not rec_path.is_absolute():
            rec_path = base / rec_path
        records.append(
            ScanRecord(
                path=rec_path,
                scan_id=scan_id,
                label=label,
                material=obj.get("material"),
                subject_id=obj.get("subject_id"),
            )
        )
    return records


def write_manifest(records: list[ScanRecord], path: str | Path) -> None:
    """Write records as one JSON object per line (inverse of parse for
    absolute paths; relative paths are written verbatim)."""
    path = Path(path)
    lines = []
    for rec in records:
        lines.append(
            json.dumps(
                {
                    "path": str(rec.path),
                    "scan_id": rec.scan_id,
                    "label": rec.label.value,
                    "material": rec.material,
                    "subject_id": rec.subject_id,
                },
                ensure_ascii=False,
            )
        )
    try:
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"unwritable manifest {path}: {exc}") from exc
