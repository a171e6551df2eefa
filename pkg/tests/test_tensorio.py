"""Binary tensor container: roundtrips and format rejection."""

import json
import os

import numpy as np
import pytest

from duo.rng import Rng
from duo.tensor import (
    TensorFormatError,
    read_tensor,
    read_tensor_dir,
    write_tensor,
    write_tensor_dir,
)


def test_roundtrip_shapes_and_values(tmp_path):
    r = Rng(5)
    for i, shape in enumerate([(), (1,), (7,), (3, 4), (2, 3, 4), (2, 1, 2, 2)]):
        x = r.normal(shape)
        path = str(tmp_path / f"t{i}.duot")
        write_tensor(path, x)
        back = read_tensor(path)
        assert back.shape == x.shape
        assert back.dtype == np.float64
        assert np.array_equal(back, x)


def test_roundtrip_preserves_exact_bits(tmp_path):
    x = np.array([0.1, 1e-300, 1e300, -0.0, np.pi])
    path = str(tmp_path / "bits.duot")
    write_tensor(path, x)
    back = read_tensor(path)
    assert x.tobytes() == back.tobytes()


def test_bad_magic_rejected(tmp_path):
    path = str(tmp_path / "bad.duot")
    with open(path, "wb") as fh:
        fh.write(b"NOPE" + b"\x00" * 16)
    with pytest.raises(TensorFormatError):
        read_tensor(path)


def test_truncated_payload_rejected(tmp_path):
    path = str(tmp_path / "trunc.duot")
    write_tensor(path, np.ones((4, 4)))
    size = os.path.getsize(path)
    with open(path, "r+b") as fh:
        fh.truncate(size - 8)
    with pytest.raises(TensorFormatError):
        read_tensor(path)


def test_trailing_garbage_rejected(tmp_path):
    path = str(tmp_path / "extra.duot")
    write_tensor(path, np.ones(3))
    with open(path, "ab") as fh:
        fh.write(b"\x00")
    with pytest.raises(TensorFormatError):
        read_tensor(path)


def test_dir_roundtrip_with_meta(tmp_path):
    d = str(tmp_path / "bundle")
    tensors = {"a": np.arange(6.0).reshape(2, 3), "b.c": np.zeros(())}
    write_tensor_dir(d, tensors, meta={"note": "x", "k": 3})
    back, meta = read_tensor_dir(d)
    assert set(back) == {"a", "b.c"}
    assert np.array_equal(back["a"], tensors["a"])
    assert meta["note"] == "x" and meta["k"] == 3


def test_dir_manifest_lists_all_tensors(tmp_path):
    d = str(tmp_path / "bundle")
    write_tensor_dir(d, {"x": np.ones(2), "y": np.ones(3)})
    with open(os.path.join(d, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert set(manifest["tensors"]) == {"x", "y"}
