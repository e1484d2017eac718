"""Checkpoint container: named tensors in a flat binary format.

Layout: magic b"FRCK", one version byte, then records until EOF. Each
record is (u32 name length, name bytes utf-8, u8 dtype tag, 4 x u32
dims, raw little-endian values). Round-trips are bit-exact. Writes go
through a temp file plus rename so a crash never leaves a torn file.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FRCK"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(RuntimeError):
    pass


def write_tensors(path, entries):
    """Write an ordered list of (name, rank-4 float array) records."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        for name, arr in entries:
            arr = np.asarray(arr)
            if arr.ndim != 4:
                raise CheckpointError(f"record {name!r} must be rank 4, got {arr.shape}")
            dt = np.dtype(arr.dtype)
            if dt not in _TAG_FOR:
                raise CheckpointError(f"record {name!r} has unsupported dtype {dt}")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(bytes([_TAG_FOR[dt]]))
            fh.write(struct.pack("<4I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=dt.newbyteorder("<")).tobytes())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_tensors(path):
    """Read back the ordered (name, array) list; validates the container."""
    data = Path(path).read_bytes()
    if len(data) < 5 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if data[4] != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {data[4]}")
    pos = 5
    out = []
    while pos < len(data):
        if pos + 4 > len(data):
            raise CheckpointError(f"{path}: truncated record header")
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + nlen + 1 + 16 > len(data):
            raise CheckpointError(f"{path}: truncated record")
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        tag = data[pos]
        pos += 1
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"{path}: record {name!r} has bad dtype tag {tag}")
        dims = struct.unpack_from("<4I", data, pos)
        pos += 16
        dt = _DTYPE_TAGS[tag]
        nbytes = int(np.prod(dims)) * dt.itemsize
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated values for record {name!r}")
        arr = np.frombuffer(data[pos:pos + nbytes], dtype=dt).reshape(dims)
        pos += nbytes
        out.append((name, arr.astype(dt.newbyteorder("="))))
    return out
