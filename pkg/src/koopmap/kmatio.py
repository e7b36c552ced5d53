"""Matrix file I/O.

Binary layout: magic bytes ``KMAT``, one version byte (1 = real, 2 = complex),
unsigned 64-bit little-endian row count, unsigned 64-bit little-endian column
count, then ``rows * cols`` little-endian float64 values in row-major order.
Complex matrices are stored with version byte 2 as interleaved (re, im) pairs,
so the stored column count is twice the logical one.

CSV alternative (real matrices only): first line ``rows,cols``, then one
comma-separated line of decimal floats per row.
"""

import os

import numpy as np

from .exceptions import DimensionMismatchError, MatrixFormatError

__all__ = ["read_matrix", "write_matrix"]

_MAGIC = b"KMAT"
_VERSION_REAL = 1
_VERSION_COMPLEX = 2


def write_matrix(matrix, path) -> None:
    """Write a 2-D real or complex matrix to ``path``.

    Paths ending in ``.csv`` use the CSV encoding (real matrices only);
    anything else is written in the binary format.
    """
    a = np.asarray(matrix)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise MatrixFormatError(f"can only store 2-D matrices, got ndim={a.ndim}")
    if str(path).endswith(".csv"):
        _write_csv(a, path)
    else:
        _write_binary(a, path)


def read_matrix(path) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix` (binary or CSV)."""
    if not os.path.exists(path):
        raise MatrixFormatError(f"no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _MAGIC:
        return _read_binary(path)
    return _read_csv(path)


def _write_binary(a, path):
    if np.iscomplexobj(a):
        version = _VERSION_COMPLEX
        payload = np.ascontiguousarray(a, dtype=np.complex128).view(np.float64)
        cols = 2 * a.shape[1]
    else:
        version = _VERSION_REAL
        payload = np.ascontiguousarray(a, dtype=np.float64)
        cols = a.shape[1]
    header = _MAGIC + bytes([version])
    header += int(a.shape[0]).to_bytes(8, "little")
    header += int(cols).to_bytes(8, "little")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.astype("<f8", copy=False).tobytes())


def _read_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 21 or blob[:4] != _MAGIC:
        raise MatrixFormatError(f"{path}: not a KMAT file")
    version = blob[4]
    if version not in (_VERSION_REAL, _VERSION_COMPLEX):
        raise MatrixFormatError(f"{path}: unknown version byte {version}")
    rows = int.from_bytes(blob[5:13], "little")
    cols = int.from_bytes(blob[13:21], "little")
    if rows == 0 or cols == 0:
        raise DimensionMismatchError(f"{path}: degenerate shape {rows}x{cols}")
    if version == _VERSION_COMPLEX and cols % 2 != 0:
        raise DimensionMismatchError(f"{path}: complex file with odd column count {cols}")
    expected = rows * cols * 8
    payload = blob[21:]
    if len(payload) != expected:
        raise DimensionMismatchError(
            f"{path}: payload holds {len(payload)} bytes, header implies {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    if version == _VERSION_REAL:
        return flat.reshape(rows, cols).copy()
    return flat.reshape(rows, cols).copy().view(np.complex128)


def _write_csv(a, path):
    if np.iscomplexobj(a):
        raise MatrixFormatError("CSV encoding supports real matrices only")
    lines = [f"{a.shape[0]},{a.shape[1]}"]
    for row in np.asarray(a, dtype=np.float64):
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise MatrixFormatError(f"{path}: empty file")
    try:
        rows, cols = (int(tok) for tok in lines[0].split(","))
    except ValueError as exc:
        raise MatrixFormatError(f"{path}: bad CSV header {lines[0]!r}") from exc
    if rows <= 0 or cols <= 0:
        raise DimensionMismatchError(f"{path}: degenerate shape {rows}x{cols}")
    if len(lines) - 1 != rows:
        raise DimensionMismatchError(
            f"{path}: header says {rows} rows, file has {len(lines) - 1}"
        )
    out = np.empty((rows, cols))
    for i, line in enumerate(lines[1:]):
        vals = line.split(",")
        if len(vals) != cols:
            raise DimensionMismatchError(f"{path}: row {i} has {len(vals)} values, expected {cols}")
        out[i] = [float(v) for v in vals]
    return out
