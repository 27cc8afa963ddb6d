"""Binary parameter checkpoints.

Layout (little-endian)::

    b"CVNT"  u32 version  u32 count
    count x ( u16 name_len, name bytes (utf-8), u8 rank, rank x u32 extent,
              prod(extents) x f32 row-major )
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"CVNT"
VERSION = 1


def encode_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"parameter {name!r} cannot be encoded")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(blob):
                raise FormatError(f"truncated data for parameter {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint: {exc}") from exc
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after last parameter")
    return out


def save_checkpoint(path, params: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(params))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
