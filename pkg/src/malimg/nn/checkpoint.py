"""The ``MIFW`` checkpoint container.

Byte layout (little-endian throughout)::

    4 bytes   magic b"MIFW"
    u32       format version (currently 1)
    u32       length L of the metadata block
    L bytes   UTF-8 JSON metadata (network config, run config, scalars)
    u32       number of tensors T
    T times:
      u16     name length, then the UTF-8 name
      u8      ndim, then ndim x u32 dims
      raw     prod(dims) float32 values, row-major
"""
from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from ..exceptions import CheckpointError

MAGIC = b"MIFW"
VERSION = 1


def dumps(tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<II", VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("checkpoint truncated")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not a MIFW checkpoint")
    version, meta_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    meta = json.loads(bytes(take(meta_len)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last tensor")
    return tensors, meta


def save(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    return loads(Path(path).read_bytes())
