"""Tiny binary container for matrices exchanged between pipeline stages.

Layout (little-endian throughout)::

    bytes 0..3   magic  b"PGM1"
    bytes 4..7   u32    rows
    bytes 8..11  u32    cols
    byte  12     u8     flag: 0 = real float64, 1 = complex (re, im) float64
    bytes 13..   payload, row-major

The same file format carries spectrograms, model weight blocks and attack
outputs, so everything round-trips through the two functions below.
"""

import struct

import numpy as np

from .exceptions import CorruptHeader, DimensionMismatch, NonFiniteInput

MAGIC = b"PGM1"
_HEADER = struct.Struct("<4sIIB")


def write_matrix(path, matrix):
    """Serialize a 2-d real or complex array to ``path``.

    Real inputs of any float/int dtype are stored as float64; complex
    inputs as interleaved (re, im) float64 pairs.
    """
    a = np.asarray(matrix)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("matrix contains NaN or Inf")
    if np.iscomplexobj(a):
        a = np.ascontiguousarray(a, dtype=np.complex128)
        flag = 1
        payload = a.view(np.float64)
    else:
        a = np.ascontiguousarray(a, dtype=np.float64)
        flag = 0
        payload = a
    header = _HEADER.pack(MAGIC, a.shape[0], a.shape[1], flag)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.astype("<f8", copy=False).tobytes())


def read_matrix(path):
    """Read a matrix previously written by :func:`write_matrix`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CorruptHeader(f"{path}: file shorter than header")
    magic, rows, cols, flag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptHeader(f"{path}: bad magic {magic!r}")
    if flag not in (0, 1):
        raise CorruptHeader(f"{path}: unknown payload flag {flag}")
    width = 16 if flag else 8
    expected = _HEADER.size + rows * cols * width
    if len(raw) != expected:
        raise CorruptHeader(
            f"{path}: payload length {len(raw) - _HEADER.size} does not match "
            f"{rows}x{cols} (flag={flag})"
        )
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if flag:
        out = data.view(np.complex128).reshape(rows, cols).copy()
    else:
        out = data.reshape(rows, cols).copy()
    return out
