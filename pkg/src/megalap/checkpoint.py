"""Flat binary checkpoint container.

Layout (all integers little-endian):

    magic      8 bytes   b"MGLPCKPT"
    version    u8        1
    meta_len   u32       length of the UTF-8 JSON metadata block
    meta       bytes     JSON (run configuration, free-form)
    count      u32       number of tensor records
    record * count:
        name_len  u16
        name      UTF-8 bytes
        ndim      u8
        dims      u32 * ndim
        payload   f64 * prod(dims), C order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MGLPCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<BI", VERSION, len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")  # tobytes() below is C order
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    def take_bytes(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        pos += n
        return data[pos - n : pos]

    version, meta_len = take("<BI")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta_at = pos
    try:
        meta = json.loads(take_bytes(meta_len).decode())
    except ValueError as exc:
        raise CheckpointError(f"corrupt metadata at byte {meta_at}: {exc}") from None
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<H")
        try:
            name = take_bytes(name_len).decode()
        except UnicodeDecodeError:
            raise CheckpointError(f"corrupt tensor name before byte {pos}") from None
        (ndim,) = take("<B")
        dims = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(dims)) if dims else 1
        if pos + 8 * n > len(data):
            raise CheckpointError(f"payload of {name!r} truncated at byte {pos}")
        tensors[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(dims).copy()
        pos += 8 * n
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after the last tensor")
    return tensors, meta


def save(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
