"""Raw tensor files: ``ARFC`` magic, version, dtype, rank-4 dims, payload.

Layout (all little-endian)::

    b"ARFC" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim=4 | 4 x u32 dims | payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ARFC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_HEADER = struct.Struct("<4sBBB4I")


class TensorFormatError(ValueError):
    pass


def as_rank4(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if len(shape) > 4:
        raise TensorFormatError(f"rank {len(shape)} exceeds 4")
    return (1,) * (4 - len(shape)) + shape


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype not in _CODES:
        raise TensorFormatError(f"unsupported dtype {array.dtype}")
    dims = as_rank4(array.shape)
    header = _HEADER.pack(MAGIC, VERSION, _CODES[array.dtype], 4, *dims)
    payload = np.ascontiguousarray(array, dtype=_DTYPES[_CODES[array.dtype]]).tobytes()
    return header + payload


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise TensorFormatError(f"truncated header: {len(blob)} bytes")
    magic, version, code, ndim, *dims = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if version != VERSION or ndim != 4 or code not in _DTYPES:
        raise TensorFormatError(f"unsupported header version={version} ndim={ndim} dtype={code}")
    dtype = _DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise TensorFormatError(f"payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def save_tensor(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
