import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from octpad.errors import ImageFormatError, ManifestError
from octpad.imagecore import (
    BScan,
    Label,
    ScanRecord,
    load_scan,
    parse_manifest,
    save_image,
    write_manifest,
)


def test_pgm_decode_known_bytes(tmp_path):
    # 2x2 P5 file with pixel bytes [0, 128, 255, 7]
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 7]))
    scan = load_scan(p)
    assert scan.height == 2 and scan.width == 2
    assert scan.pixels.tolist() == [[0, 128], [255, 7]]


def test_pgm_header_comments(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n# comment line\n2 1\n255\n" + bytes([9, 10]))
    assert load_scan(p).pixels.tolist() == [[9, 10]]


def test_truncated_pgm_header_errors(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P5\n2 2")
    with pytest.raises(ImageFormatError, match="malformed image"):
        load_scan(p)


def test_truncated_pgm_pixels_errors(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P5\n2 2\n255\n\x00\x01")
    with pytest.raises(ImageFormatError, match="malformed image"):
        load_scan(p)


def test_unknown_format_errors(tmp_path):
    p = tmp_path / "bad.img"
    p.write_bytes(b"GARBAGE")
    with pytest.raises(ImageFormatError, match="malformed image"):
        load_scan(p)


def test_non_gray_png_rejected(tmp_path):
    from PIL import Image

    p = tmp_path / "rgb.png"
    Image.new("RGB", (4, 4)).save(p)
    with pytest.raises(ImageFormatError, match="unsupported bit depth"):
        load_scan(p)


def test_canonical_size_roundtrip(tmp_path):
    img = np.zeros((1024, 1900), dtype=np.uint8)
    p = tmp_path / "full.pgm"
    save_image(img, p)
    scan = load_scan(p)
    assert scan.height == 1024 and scan.width == 1900
    assert not scan.pixels.any()


@pytest.mark.parametrize("ext", ["pgm", "png"])
def test_roundtrip_examples(tmp_path, ext):
    img = np.array([[0, 128], [255, 7]], dtype=np.uint8)
    p = tmp_path / f"x.{ext}"
    save_image(img, p)
    assert np.array_equal(load_scan(p).pixels, img)


@settings(max_examples=25, deadline=None)
@given(
    arrays(np.uint8, st.tuples(st.integers(1, 24), st.integers(1, 24))),
    st.sampled_from(["pgm", "png"]),
)
def test_roundtrip_property(tmp_path_factory, img, ext):
    p = tmp_path_factory.mktemp("rt") / f"img.{ext}"
    save_image(img, p)
    assert np.array_equal(load_scan(p).pixels, img)


def test_save_unwritable_path(tmp_path):
    with pytest.raises(ImageFormatError, match="unwritable"):
        save_image(np.zeros((2, 2), np.uint8), tmp_path / "no_such_dir" / "x.pgm")


def test_bscan_immutable():
    scan = BScan("s", np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        scan.pixels[0, 0] = 1


def test_manifest_minimal_record(tmp_path):
    m = tmp_path / "m.jsonl"
    m.write_text('{"path": "a.png", "scan_id": "a", "label": "bonafide"}\n')
    (rec,) = parse_manifest(m)
    assert rec.material is None
    assert rec.label is Label.BONAFIDE
    assert rec.path == tmp_path / "a.png"  # resolved against manifest dir


def test_manifest_duplicate_scan_id(tmp_path):
    m = tmp_path / "m.jsonl"
    m.write_text(
        '{"path": "a.png", "scan_id": "a", "label": "bonafide"}\n'
        '{"path": "b.png", "scan_id": "a", "label": "pa"}\n'
    )
    with pytest.raises(ManifestError, match="duplicate scan_id"):
        parse_manifest(m)


def test_manifest_unknown_label(tmp_path):
    m = tmp_path / "m.jsonl"
    m.write_text('{"path": "a.png", "scan_id": "a", "label": "spoof"}\n')
    with pytest.raises(ManifestError, match="unknown label"):
        parse_manifest(m)


def test_manifest_missing_key(tmp_path):
    m = tmp_path / "m.jsonl"
    m.write_text('{"path": "a.png", "label": "pa"}\n')
    with pytest.raises(ManifestError, match="missing required key"):
        parse_manifest(m)


def test_manifest_write_parse_identity(tmp_path):
    records = [
        ScanRecord(tmp_path / "a.png", "a", Label.BONAFIDE, None, "subj1"),
        ScanRecord(tmp_path / "b.png", "b", Label.PA, "tan_ecoflex", None),
    ]
    m = tmp_path / "m.jsonl"
    write_manifest(records, m)
    assert parse_manifest(m) == records


def test_manifest_label_loaded_onto_scan(tmp_path):
    img = np.full((3, 3), 9, dtype=np.uint8)
    save_image(img, tmp_path / "a.png")
    m = tmp_path / "m.jsonl"
    m.write_text(
        json.dumps(
            {"path": "a.png", "scan_id": "a", "label": "pa", "material": "gel"}
        )
        + "\n"
    )
    (rec,) = parse_manifest(m)
    scan = load_scan(rec.path, rec)
    assert scan.label is Label.PA and scan.material == "gel"
    # without a record the scan is unlabeled
    assert load_scan(rec.path).label is None
