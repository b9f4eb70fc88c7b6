"""Little-endian binary checkpoint format.

Layout: magic ``b"MLCL"``, format version (u32), then tensors until EOF,
each as name length (u32), UTF-8 name, rank (u32), dims (u64 each) and a raw
float64 payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MLCL"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")  # tobytes() is row-major; keeps rank 0
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise CheckpointError("not an MLCL checkpoint")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    out = {}
    try:
        while pos < len(buf):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(buf):
                raise CheckpointError(f"truncated payload for tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return out


def save(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
