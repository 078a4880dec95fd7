"""Dense matrix files.

CSV: one matrix row per line, comma separated, optional non-numeric header row.

Binary: 16-byte header followed by ``n * p`` little-endian float64 values in
row-major order. Header layout: bytes 0-7 magic ``b"GSBMAT01"``, bytes 8-11
``n`` and bytes 12-15 ``p``, both little-endian uint32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GSBMAT01"
_HEADER = struct.Struct("<8sII")


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if head[:8] == MAGIC:
        return _read_binary(path)
    return _read_csv(path)


def _read_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, n, p = _HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != n * p:
        raise ValueError(f"{path}: expected {n * p} values, found {body.size}")
    return body.reshape(n, p).astype(float)


def _read_csv(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    try:
        [float(v) for v in lines[0].split(",")]
    except ValueError:
        lines = lines[1:]
    try:
        rows = [[float(v) for v in ln.split(",")] for ln in lines]
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: rows have differing lengths {sorted(widths)}")
    return np.array(rows, dtype=float)


def read_vector(path) -> np.ndarray:
    """A matrix file holding a single row or a single column."""
    a = read_matrix(path)
    if 1 not in a.shape:
        raise ValueError(f"{path}: expected a vector, got shape {a.shape}")
    return a.reshape(-1)


def write_matrix_csv(path, a) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    with open(path, "w", encoding="utf-8") as fh:
        for row in a:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_matrix_binary(path, a) -> None:
    a = np.ascontiguousarray(np.atleast_2d(np.asarray(a, dtype="<f8")))
    n, p = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, p))
        fh.write(a.tobytes())
