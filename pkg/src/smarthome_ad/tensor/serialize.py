"""Flat binary container for named float64 parameter arrays.

Layout (all integers little-endian uint32)::

    magic b"SHAD" | version | n_params
    per parameter: name_len | name (utf-8) | rank | dims... | float64 LE values
"""
from __future__ import annotations

import struct
from typing import BinaryIO, Mapping

import numpy as np

from ..errors import DataError

MAGIC = b"SHAD"
VERSION = 1


def save_params(params: Mapping[str, np.ndarray], stream: BinaryIO) -> None:
    stream.write(MAGIC)
    stream.write(struct.pack("<II", VERSION, len(params)))
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        stream.write(struct.pack("<I", len(raw)))
        stream.write(raw)
        stream.write(struct.pack("<I", arr.ndim))
        stream.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        stream.write(arr.astype("<f8").tobytes(order="C"))


def _read(stream: BinaryIO, n: int) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise DataError("truncated parameter file")
    return buf


def load_params(stream: BinaryIO) -> dict[str, np.ndarray]:
    if _read(stream, 4) != MAGIC:
        raise DataError("not a parameter file (bad magic)")
    version, count = struct.unpack("<II", _read(stream, 8))
    if version != VERSION:
        raise DataError(f"unsupported parameter file version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read(stream, 4))
        name = _read(stream, name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", _read(stream, 4))
        dims = struct.unpack(f"<{rank}I", _read(stream, 4 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(_read(stream, 8 * n), dtype="<f8").astype(np.float64).reshape(dims)
    if stream.read(1):
        raise DataError("trailing bytes after parameter data")
    return out
