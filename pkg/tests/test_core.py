import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from promptmix.core import (
    DenseMap, EpochManifest, ImageRecord, PromptRecord, decode_dense_map, dumps_canonical, encode_dense_map,
    load_image_manifest, read_dense_map, save_image_manifest, validate_manifest, write_dense_map,
)
from promptmix.errors import FormatError


def dmap_bytes_oracle(rows, cols, values):
    """Independent byte layout: magic, version, dtype, rows, cols, f32 LE payload."""
    out = b"DMAP" + bytes([1, 0]) + struct.pack("<I", rows) + struct.pack("<I", cols)
    for v in values:
        out += struct.pack("<f", v)
    return out


def test_smallest_map_file(tmp_path):
    path = tmp_path / "m.dmap"
    write_dense_map(DenseMap([[0.0]]), path)
    data = path.read_bytes()
    # header 4 + 1 + 1 + 4 + 4 = 14 bytes, one f32 payload value
    assert len(data) == 18
    assert read_dense_map(path) == DenseMap([[0.0]])


def test_2x3_layout_matches_oracle(tmp_path):
    m = DenseMap(np.arange(1, 7, dtype=float).reshape(2, 3))
    path = tmp_path / "m.dmap"
    write_dense_map(m, path)
    data = path.read_bytes()
    assert data == dmap_bytes_oracle(2, 3, [1, 2, 3, 4, 5, 6])
    magic, version, dtype, rows, cols = struct.unpack_from("<4sBBII", data)
    assert (magic, version, dtype, rows, cols) == (b"DMAP", 1, 0, 2, 3)
    assert read_dense_map(path) == m


@pytest.mark.parametrize("mutate", [
    lambda b: b"XMAP" + b[4:],
    lambda b: b[:4] + bytes([2]) + b[5:],
    lambda b: b[:5] + bytes([7]) + b[6:],
    lambda b: b[:-1],
    lambda b: b[:10],
    lambda b: b[:6] + struct.pack("<I", 0) + b[10:],
])
def test_corrupt_dmap_rejected(mutate):
    data = encode_dense_map(DenseMap(np.ones((2, 3))))
    with pytest.raises(FormatError):
        decode_dense_map(mutate(data))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(0, 2.0 ** 100, width=32, allow_nan=False, allow_infinity=False)))
def test_dmap_round_trip_identity(values):
    m = DenseMap(values)
    back = decode_dense_map(encode_dense_map(m))
    assert back == m
    assert np.array_equal(back.values.astype(np.float32).view(np.uint32), values.view(np.uint32))


def _images(n=3):
    return [ImageRecord(f"img{i}", f"/data/img{i}.jpg", 64, 48) for i in range(n)]


def test_valid_manifest_has_no_violations(tmp_path):
    save_image_manifest(tmp_path / "m.json", _images())
    doc = json.loads((tmp_path / "m.json").read_text())
    assert validate_manifest(doc) == []


def test_duplicate_id_is_one_violation(tmp_path):
    recs = _images() + [ImageRecord("img1", "/data/other.jpg", 64, 48)]
    doc = {"kind": "images", "images": [r.to_dict() for r in recs]}
    violations = validate_manifest(doc)
    assert len(violations) == 1
    assert "img1" in violations[0]


def test_generated_missing_seed_is_one_violation():
    rec = ImageRecord("p00000-s1", "/x.jpg", 8, 8, prompt_id="p00000", seed=1).to_dict()
    del rec["origin"]["seed"]
    violations = validate_manifest({"kind": "images", "images": [rec]})
    assert len(violations) == 1 and "seed" in violations[0]


def test_real_record_with_seed_is_violation():
    rec = ImageRecord("a", "/x.jpg", 8, 8).to_dict()
    rec["origin"]["seed"] = 3
    assert len(validate_manifest({"kind": "images", "images": [rec]})) == 1


def test_zero_width_is_violation():
    rec = ImageRecord("a", "/x.jpg", 8, 8).to_dict()
    rec["width"] = 0
    assert any("width" in v for v in validate_manifest({"kind": "images", "images": [rec]}))


def test_epoch_manifest_checks():
    m = EpochManifest(0, ["r1", "r2"], ["f1", "f2"]).to_dict()
    assert validate_manifest(m) == []
    m["fake_ids"] = ["f1", "f1"]
    assert len(validate_manifest(m)) == 2  # duplicate sample and stale checksum


def test_prompt_bag_checks():
    ok = PromptRecord("p0", "a crowd", source_image_id="img1").to_dict()
    bad = PromptRecord("p1", "x").to_dict()
    bad["provenance"] = {"kind": "auto"}
    assert validate_manifest({"kind": "prompts", "prompts": [ok]}) == []
    assert len(validate_manifest({"kind": "prompts", "prompts": [ok, bad]})) == 1


def test_manifest_paths_are_relative_on_disk(tmp_path):
    (tmp_path / "imgs").mkdir()
    recs = [ImageRecord("a", str(tmp_path / "imgs" / "a.jpg"), 4, 4)]
    save_image_manifest(tmp_path / "sub" / "m.json", recs)
    doc = json.loads((tmp_path / "sub" / "m.json").read_text())
    assert doc["images"][0]["path"] == "../imgs/a.jpg"
    assert load_image_manifest(tmp_path / "sub" / "m.json") == recs


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-2**63, 2**64) | st.text()
    | st.floats(allow_nan=False, allow_infinity=False),
    lambda children: st.lists(children, max_size=4) | st.dictionaries(st.text(max_size=5), children, max_size=4),
    max_leaves=20,
)


@settings(max_examples=200)
@given(json_values)
def test_canonical_json_reserialization_is_byte_identical(obj):
    text = dumps_canonical(obj)
    assert dumps_canonical(json.loads(text)) == text
