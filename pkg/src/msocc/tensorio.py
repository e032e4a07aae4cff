"""Binary tensor file format and its error taxonomy.

Layout (all multi-byte fields little-endian):

    magic    4 bytes  b"MSOC"
    version  u16      currently 1
    dtype    u8       0 = f32, 1 = f64, 2 = u8, 3 = i32
    ndim     u8
    dims     ndim x u64
    payload  row-major, densely packed

A 2x3 u8 tensor file is therefore 4 + 2 + 1 + 1 + 16 + 6 = 30 bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MSOC"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("u1"): 2,
    np.dtype("<i4"): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class TensorIOError(Exception):
    """Base for tensor-file failures (exit code 4 at the CLI)."""


class BadMagicError(TensorIOError):
    pass


class UnsupportedVersionError(TensorIOError):
    pass


class DtypeMismatchError(TensorIOError):
    pass


class TruncatedPayloadError(TensorIOError):
    pass


def write_tensor(path, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    a = a.astype(dt, copy=False)
    if a.dtype not in _DTYPE_CODES:
        raise DtypeMismatchError(f"unsupported dtype {a.dtype}")
    header = MAGIC + struct.pack("<HBB", VERSION, _DTYPE_CODES[a.dtype], a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(a.tobytes())


def read_tensor(path, expect_dtype=None, expect_ndim=None) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise TruncatedPayloadError(f"{path}: file shorter than header")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    version, code, ndim = struct.unpack("<HBB", raw[4:8])
    if version > VERSION:
        raise UnsupportedVersionError(
            f"{path}: file version {version} is newer than supported {VERSION}")
    if code not in _CODE_DTYPES:
        raise DtypeMismatchError(f"{path}: unknown dtype code {code}")
    if len(raw) < 8 + 8 * ndim:
        raise TruncatedPayloadError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{ndim}Q", raw[8:8 + 8 * ndim])
    dtype = _CODE_DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[8 + 8 * ndim:]
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if expect_dtype is not None and arr.dtype != np.dtype(expect_dtype):
        raise DtypeMismatchError(
            f"{path}: dtype {arr.dtype}, expected {np.dtype(expect_dtype)}")
    if expect_ndim is not None and arr.ndim != expect_ndim:
        raise DtypeMismatchError(
            f"{path}: ndim {arr.ndim}, expected {expect_ndim}")
    return arr
