"""Binary export of lattice kernels.

Format (little endian throughout):

- 64-byte header: magic b"PGKN", u32 version (1), u32 spatial dimension,
  u32 number of axis lengths, u32 axis lengths (up to 8), u32 dtype code
  (1 = float64), zero padding to 64 bytes
- row-major float64 payload

A JSON sidecar with diagnostics (row-sum residual, decay fit) is written
by the command-line tool next to the binary.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DomainError

MAGIC = b"PGKN"
VERSION = 1
DTYPE_F64 = 1
HEADER_SIZE = 64
MAX_AXES = 8


def write_kernel(path: str, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype="<f8")
    if array.ndim > MAX_AXES:
        raise DomainError(f"at most {MAX_AXES} axes supported, got {array.ndim}")
    header = struct.pack(
        "<4sIII", MAGIC, VERSION, array.ndim, array.ndim
    )
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    header += struct.pack("<I", DTYPE_F64)
    header += b"\x00" * (HEADER_SIZE - len(header))
    with open(path, "wb") as f:
        f.write(header)
        f.write(array.tobytes(order="C"))


def read_kernel(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(HEADER_SIZE)
        if len(header) != HEADER_SIZE:
            raise DomainError("truncated kernel file header")
        magic, version, ndim, naxes = struct.unpack_from("<4sIII", header, 0)
        if magic != MAGIC:
            raise DomainError(f"bad magic {magic!r}")
        if version != VERSION:
            raise DomainError(f"unsupported version {version}")
        if naxes != ndim or ndim > MAX_AXES:
            raise DomainError("inconsistent axis count")
        shape = struct.unpack_from(f"<{ndim}I", header, 16)
        (dtype_code,) = struct.unpack_from("<I", header, 16 + 4 * ndim)
        if dtype_code != DTYPE_F64:
            raise DomainError(f"unsupported dtype code {dtype_code}")
        payload = f.read()
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise DomainError(
            f"payload size mismatch: expected {expected} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
