"""ARMW weight container.

Layout (little-endian)::

    b"ARMW"  u32 version=1  u32 count
    per tensor:
        u16 name_len, utf-8 name, u8 dtype (0=f32, 1=f64), u8 rank,
        u64 extent * rank, raw row-major data

Tensors keep their on-disk dtype when read back, so a read/write cycle is
bit-exact.
"""

from __future__ import annotations

import io
import os
import struct
from typing import Mapping

import numpy as np

from .tensor_core import Tensor

MAGIC = b"ARMW"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class ArmwFormatError(ValueError):
    pass


def _as_array(value, dtype) -> np.ndarray:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    if dtype is not None:
        arr = arr.astype(dtype)
    if arr.dtype not in _CODES:
        raise ArmwFormatError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
    return arr


def encode(tensors: Mapping[str, object], dtype=None) -> bytes:
    """Serialize named arrays; ``dtype`` forces a storage type for all of them."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name, value in tensors.items():
        arr = _as_array(value, dtype)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise ArmwFormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ArmwFormatError(f"rank {arr.ndim} too large for {name}")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
    return buf.getvalue()


def decode(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ArmwFormatError("truncated ARMW data")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ArmwFormatError("bad magic; not an ARMW container")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise ArmwFormatError(f"unsupported ARMW version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise ArmwFormatError(f"unknown dtype code {code} for {name}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        dt = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(shape)
        if name in out:
            raise ArmwFormatError(f"duplicate tensor name {name}")
        out[name] = arr.astype(dt.newbyteorder("="), copy=True)
    if pos != len(view):
        raise ArmwFormatError(f"{len(view) - pos} trailing bytes after last tensor")
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, object], dtype=None) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(tensors, dtype=dtype))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())
