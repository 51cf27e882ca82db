"""Little-endian tensor entry encoding shared by checkpoints and raw-tensor files.

Entry layout: name length (u16), UTF-8 name, dtype code (u8, 0 = f64),
ndim (u8), dims (u32 each), raw values.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

DTYPE_F64 = 0


class TruncatedError(EOFError):
    pass


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"expected {n} bytes, got {len(buf)}")
    return buf


def write_entry(fh: BinaryIO, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw_name = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw_name)))
    fh.write(raw_name)
    fh.write(struct.pack("<BB", DTYPE_F64, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def read_entry(fh: BinaryIO) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    dtype, ndim = struct.unpack("<BB", _read_exact(fh, 2))
    if dtype != DTYPE_F64:
        raise ValueError(f"unsupported dtype code {dtype} for entry {name!r}")
    dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(dims)) if ndim else 1
    arr = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(dims)
    return name, arr.astype(np.float64)
