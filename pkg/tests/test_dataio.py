"""File-format tests.

IDX fixtures are assembled byte-by-byte with struct so the reader is checked
against the wire format itself, not against the writer. Model and record
round-trips must be bit-exact (JSON shortest-repr floats, CSV repr floats).
"""

import json
import struct

import numpy as np
import pytest

from conftest import random_mlp
from fisense.classifier import Activation, LabeledDataset
from fisense.dataio import (
    MODEL_FORMAT_VERSION,
    RECORD_FIELDS,
    load_model,
    read_idx,
    read_records,
    save_model,
    write_grid_csv,
    write_idx,
    write_records,
)
from fisense.influence import InfluenceRecord


def idx_image_bytes(arrays):
    n = len(arrays)
    rows, cols = arrays[0].shape
    head = struct.pack(">IIII", 2051, n, rows, cols)
    body = b"".join(a.astype(np.uint8).tobytes() for a in arrays)
    return head + body


def idx_label_bytes(labels):
    return struct.pack(">II", 2049, len(labels)) + bytes(labels)


# ==================== idx ====================


def test_read_idx_frozen_bytes(tmp_path):
    img = np.array([[0, 255], [128, 64]], dtype=np.uint8)
    (tmp_path / "im.idx").write_bytes(idx_image_bytes([img]))
    (tmp_path / "lb.idx").write_bytes(idx_label_bytes([3]))
    ds = read_idx(tmp_path / "im.idx", tmp_path / "lb.idx")
    assert len(ds) == 1
    assert ds.image_shape == (2, 2)
    np.testing.assert_allclose(ds.images[0], [0.0, 1.0, 128 / 255, 64 / 255], rtol=1e-15)
    assert ds.labels[0] == 3


def test_read_idx_rejects_bad_magic(tmp_path):
    img = np.zeros((2, 2), dtype=np.uint8)
    bad = struct.pack(">IIII", 2052, 1, 2, 2) + img.tobytes()
    (tmp_path / "im.idx").write_bytes(bad)
    (tmp_path / "lb.idx").write_bytes(idx_label_bytes([0]))
    with pytest.raises(ValueError, match="magic"):
        read_idx(tmp_path / "im.idx", tmp_path / "lb.idx")


def test_read_idx_rejects_truncated_payload(tmp_path):
    head = struct.pack(">IIII", 2051, 2, 2, 2)
    (tmp_path / "im.idx").write_bytes(head + b"\x00" * 7)  # needs 8
    (tmp_path / "lb.idx").write_bytes(idx_label_bytes([0, 1]))
    with pytest.raises(ValueError, match="truncat|size"):
        read_idx(tmp_path / "im.idx", tmp_path / "lb.idx")


def test_read_idx_rejects_count_mismatch(tmp_path):
    img = np.zeros((2, 2), dtype=np.uint8)
    (tmp_path / "im.idx").write_bytes(idx_image_bytes([img, img]))
    (tmp_path / "lb.idx").write_bytes(idx_label_bytes([0]))
    with pytest.raises(ValueError, match="count"):
        read_idx(tmp_path / "im.idx", tmp_path / "lb.idx")


def test_write_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(7, 9)).astype(np.float64) / 255.0
    ds = LabeledDataset(images, rng.integers(0, 4, size=7), image_shape=(3, 3))
    write_idx(ds, tmp_path / "a.idx", tmp_path / "b.idx")
    back = read_idx(tmp_path / "a.idx", tmp_path / "b.idx")
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.image_shape == (3, 3)


# ==================== model documents ====================


def test_model_roundtrip_bit_exact(tmp_path):
    model = random_mlp((5, 4, 3), seed=11, activation=Activation.RELU)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert len(back.layers) == 2
    for a, b in zip(model.layers, back.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)
        assert a.activation is b.activation


def test_model_version_gate(tmp_path):
    model = random_mlp((3, 2), seed=0)
    save_model(model, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["format_version"] == MODEL_FORMAT_VERSION
    doc["format_version"] = MODEL_FORMAT_VERSION + 1
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="version"):
        load_model(tmp_path / "m.json")


def test_model_unknown_activation(tmp_path):
    model = random_mlp((3, 2), seed=0)
    save_model(model, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["layers"][0]["activation"] = "tanh"
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="activation"):
        load_model(tmp_path / "m.json")


def test_model_truncated_document(tmp_path):
    model = random_mlp((3, 2), seed=0)
    save_model(model, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "m.json").write_text(text[: len(text) // 2])
    with pytest.raises(ValueError):
        load_model(tmp_path / "m.json")


# ==================== records csv ====================


def test_write_records_golden(tmp_path):
    recs = [
        InfluenceRecord(0, "input", 1 / 3, 0.7071067811865476, None, 1, 0, 0.75, 0.0),
        InfluenceRecord(1, "layer:0", 0.25, None, 2.0, None, 1, 0.5, 1e-07),
    ]
    path = tmp_path / "records.csv"
    write_records(recs, path)
    text = path.read_text()
    assert text == (
        "sample_id,target,fi,jacobian_norm,cook_max,y_true,y_pred,p_pred,residual_ratio\n"
        "0,input,0.3333333333333333,0.7071067811865476,,1,0,0.75,0.0\n"
        "1,layer:0,0.25,,2.0,,1,0.5,1e-07\n"
    )


def test_records_roundtrip(tmp_path):
    recs = [
        InfluenceRecord(5, "all-params", 0.125, 0.5, None, 2, 2, 0.9999, 1e-12),
        InfluenceRecord(6, "input", None, 0.25, None, 0, 1, 0.5, 0.0),
    ]
    path = tmp_path / "r.csv"
    write_records(recs, path)
    assert read_records(path) == recs


def test_read_records_rejects_wrong_header(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError, match="header"):
        read_records(path)


def test_record_fields_match_header():
    assert RECORD_FIELDS == (
        "sample_id",
        "target",
        "fi",
        "jacobian_norm",
        "cook_max",
        "y_true",
        "y_pred",
        "p_pred",
        "residual_ratio",
    )


def test_grid_csv(tmp_path):
    grid = np.array([[0.5, 1.0], [1 / 3, 0.0]])
    write_grid_csv(grid, tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text() == "0.5,1.0\n0.3333333333333333,0.0\n"
