"""Self-describing binary tensor files.

Layout: magic ``CVT1``, rank as little-endian uint64, each dim as
little-endian uint64, a uint32 dtype tag (1 = float32), then the
row-major float32 payload. An optional JSON sidecar lives at
``<path>.json``. Round trips are byte-lossless for float32 data.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CVT1"
DTYPE_TAG_FLOAT32 = 1
_MAX_RANK = 8


class TensorFormatError(ValueError):
    pass


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_tensor(path, array, meta: dict | None = None) -> None:
    """Write ``array`` as a float32 tensor file (casting if needed)."""
    arr = np.asarray(array, dtype=np.float32)  # tobytes(order="C") handles layout
    if arr.ndim > _MAX_RANK:
        raise TensorFormatError(f"rank {arr.ndim} exceeds the supported maximum {_MAX_RANK}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(struct.pack("<I", DTYPE_TAG_FLOAT32))
        fh.write(arr.tobytes(order="C"))
    if meta is not None:
        with open(sidecar_path(path), "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)
            fh.write("\n")


def load_tensor(path, with_meta: bool = False):
    """Read a tensor file; returns the array, or (array, meta) with ``with_meta``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}")
    offset = 4
    (rank,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    if rank > _MAX_RANK:
        raise TensorFormatError(f"{path}: implausible rank {rank}")
    dims = []
    for _ in range(rank):
        (d,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        dims.append(int(d))
    (tag,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if tag != DTYPE_TAG_FLOAT32:
        raise TensorFormatError(f"{path}: unsupported dtype tag {tag}")
    count = 1
    for d in dims:
        count *= d
    expected = count * 4
    payload = raw[offset:]
    if len(payload) != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if not with_meta:
        return arr
    meta = None
    sc = sidecar_path(path)
    if sc.exists():
        with open(sc) as fh:
            meta = json.load(fh)
    return arr, meta
