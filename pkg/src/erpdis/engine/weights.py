"""ERPW weight files.

Layout (little-endian)::

    b"ERPW"  u16 version  u32 n_tensors
    per tensor: u16 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  f32 data
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import BadMagicError, DecodeError, PathError, ShapeError, VersionMismatchError
from .network import NetworkSpec, Params, check_params

MAGIC = b"ERPW"
VERSION = 1


def encode_weights(params: Params) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        value = np.asarray(value)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_weights(blob: bytes) -> Params:
    view = memoryview(blob)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise DecodeError(f"truncated weight file while reading {what} at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise BadMagicError(f"bad magic, expected {MAGIC!r}")
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise VersionMismatchError(f"unsupported ERPW version {version}")
    params: Params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"{name} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(4 * size, f"{name} data"), dtype="<f4")
        params[name] = data.reshape(dims).astype(np.float32)
    if pos != len(view):
        raise DecodeError(f"{len(view) - pos} trailing bytes after {count} tensors")
    return params


def save_weights(path, params: Params) -> Path:
    path = Path(path)
    try:
        path.write_bytes(encode_weights(params))
    except OSError as exc:
        raise PathError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def load_weights(path, spec: Optional[NetworkSpec] = None) -> Params:
    """Read an ERPW file; with ``spec`` given, names and shapes must match it."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise PathError(f"cannot read {path}: {exc.strerror or exc}") from exc
    params = decode_weights(blob)
    if spec is not None:
        try:
            check_params(params, spec)
        except ShapeError as exc:
            raise ShapeError(f"{path}: {exc}") from exc
    return params
