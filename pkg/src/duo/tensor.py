"""Float64 tensor helpers and the DUOT binary interchange format.

Tensors are C-contiguous float64 numpy arrays throughout the package.
The on-disk format is: magic b"DUOT", little-endian uint32 rank, uint32
dims[rank], then the payload as row-major float64.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"DUOT"


class TensorFormatError(ValueError):
    """Raised for malformed DUOT files."""


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array; rank 0 stays rank 0."""
    return np.asarray(x, dtype=np.float64, order="C")


def write_tensor(path: str, x) -> None:
    x = as_tensor(x)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", x.ndim))
        fh.write(struct.pack(f"<{x.ndim}I", *x.shape))
        fh.write(x.astype("<f8").tobytes(order="C"))


def read_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head != MAGIC:
            raise TensorFormatError(f"{path}: bad magic {head!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        if rank > 32:
            raise TensorFormatError(f"{path}: implausible rank {rank}")
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        n = 1
        for d in dims:
            n *= d
        payload = fh.read(8 * n)
        if len(payload) != 8 * n:
            raise TensorFormatError(
                f"{path}: payload holds {len(payload) // 8} values, header promises {n}"
            )
        extra = fh.read(1)
        if extra:
            raise TensorFormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def write_tensor_dir(dirpath: str, tensors: dict, meta: dict | None = None) -> None:
    """Write a named tensor collection: one DUOT file each plus manifest.json."""
    os.makedirs(dirpath, exist_ok=True)
    names = sorted(tensors)
    for name in names:
        write_tensor(os.path.join(dirpath, name + ".duot"), tensors[name])
    manifest = {"format": 1, "tensors": names, "meta": meta or {}}
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_tensor_dir(dirpath: str) -> tuple[dict, dict]:
    """Read a collection written by write_tensor_dir; returns (tensors, meta)."""
    with open(os.path.join(dirpath, "manifest.json")) as fh:
        manifest = json.load(fh)
    tensors = {
        name: read_tensor(os.path.join(dirpath, name + ".duot"))
        for name in manifest["tensors"]
    }
    return tensors, manifest.get("meta", {})
