"""Flat binary container for named float64 arrays.

Layout (all integers little-endian)::

    magic      5 bytes   b"OVSK1"
    version    uint32
    count      uint32
    count x record:
        name_len  uint32
        name      name_len bytes, UTF-8
        rank      uint32
        extents   rank x uint64
        values    prod(extents) x float64, row-major
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"OVSK1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes(order="C"))
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:5] != MAGIC:
        raise CheckpointError("not an OVSK1 container (bad magic)")
    pos = 5
    try:
        version, count = struct.unpack_from("<II", buf, pos)
        pos += 8
        if version != VERSION:
            raise CheckpointError(f"unsupported container version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            size = int(np.prod(shape)) if rank else 1
            nbytes = 8 * size
            if pos + nbytes > len(buf):
                raise CheckpointError(f"truncated record '{name}'")
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError("truncated container") from exc
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last record")
    return out


def save(path, arrays: Mapping[str, np.ndarray]) -> None:
    """Write atomically so a crash never leaves a half-written checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(arrays))
    os.replace(tmp, path)


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
