"""Dense float64 matrices: validation, thin SVD, centering and file formats.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.  Every
loader and public entry point funnels through :func:`as_matrix`, which
rejects NaN/Inf and empty shapes.

Binary format (RAMX, little-endian)::

    offset  size  field
    0       4     magic b"RAMX"
    4       4     version (uint32) = 1
    8       8     rows (uint64)
    16      8     cols (uint64)
    24      8*r*c float64 payload, row-major
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import (
    BadMagicError,
    DecompositionError,
    DimensionError,
    NonFiniteError,
    NonFinitePayloadError,
    ShapeError,
    TruncatedPayloadError,
    VersionMismatchError,
)

RAMX_MAGIC = b"RAMX"
RAMX_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def as_matrix(data, name="matrix"):
    """Return ``data`` as a finite 2-D float64 array (1-D input becomes one row)."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got {arr.ndim}-D")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries")
    return arr


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        return (self.U * self.S) @ self.V.T


def _canonical_signs(U, V):
    # largest-|entry| of each left vector made non-negative; argmax picks the
    # earliest index on ties.  V is flipped with U so U diag(S) V^T is unchanged.
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def svd(M):
    """Thin SVD with descending singular values and canonical signs.

    Returns an :class:`SvdResult` whose ``V`` holds right singular vectors as
    columns (not ``V^T``).
    """
    M = as_matrix(M)
    last_error = None
    for driver in ("gesdd", "gesvd"):
        try:
            U, S, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver=driver)
            break
        except (np.linalg.LinAlgError, ValueError) as exc:
            last_error = exc
    else:
        raise DecompositionError(
            f"SVD failed to converge for matrix of shape {M.shape[0]}x{M.shape[1]}"
        ) from last_error
    U, V = _canonical_signs(U, Vt.T)
    return SvdResult(U=U, S=np.maximum(S, 0.0), V=V)


def center_columns(M):
    M = as_matrix(M)
    mean = M.mean(axis=0)
    return M - mean, mean


def principal_directions(M, k):
    """Top-``k`` principal directions (cols x k) of the column-centered matrix."""
    M = as_matrix(M)
    rows, cols = M.shape
    limit = min(rows - 1, cols)
    if k < 1 or k > limit:
        raise DimensionError(
            f"k={k} principal directions requested; need 1 <= k <= {limit} for shape {M.shape}"
        )
    centered, _ = center_columns(M)
    # canonicalize on the direction itself rather than on the score vector
    _, _, Vt = scipy.linalg.svd(centered, full_matrices=False)
    V, _ = _canonical_signs(Vt.T[:, :k], Vt.T[:, :k])
    return V


# -- persistence ----------------------------------------------------------


def matrix_to_bytes(M):
    M = as_matrix(M)
    rows, cols = M.shape
    header = _HEADER.pack(RAMX_MAGIC, RAMX_VERSION, rows, cols)
    return header + np.ascontiguousarray(M, dtype="<f8").tobytes()


def matrix_from_bytes(blob):
    if len(blob) < _HEADER.size:
        if blob[:4] != RAMX_MAGIC[: len(blob[:4])]:
            raise BadMagicError("not a RAMX payload (bad magic)")
        raise TruncatedPayloadError(f"RAMX header truncated: {len(blob)} bytes")
    magic, version, rows, cols = _HEADER.unpack_from(blob, 0)
    if magic != RAMX_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {RAMX_MAGIC!r}")
    if version != RAMX_VERSION:
        raise VersionMismatchError(f"unsupported RAMX version {version}")
    if rows < 1 or cols < 1:
        raise TruncatedPayloadError(f"RAMX header declares empty shape {rows}x{cols}")
    expected = rows * cols * 8
    payload = blob[_HEADER.size :]
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"RAMX header declares {rows}x{cols} ({expected} bytes) "
            f"but payload has {len(payload)} bytes"
        )
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(data)):
        raise NonFinitePayloadError("RAMX payload contains NaN or Inf entries")
    return data


def save_matrix(M, path):
    """Write ``M`` to ``path``; ``.csv`` suffix selects CSV, anything else RAMX."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        save_csv(M, path)
        return
    path.write_bytes(matrix_to_bytes(M))


def load_matrix(path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    return matrix_from_bytes(path.read_bytes())


def save_csv(M, path):
    M = as_matrix(M)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in M:
            writer.writerow([repr(float(v)) for v in row])


def _is_number(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_csv(path):
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if rows and rows[0] and not _is_number(rows[0][0].strip()):
        rows = rows[1:]
    if not rows:
        raise TruncatedPayloadError(f"{path}: no numeric rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ShapeError(f"{path}: ragged CSV rows")
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ShapeError(f"{path}: non-numeric entry ({exc})") from None
    if not np.all(np.isfinite(data)):
        raise NonFinitePayloadError(f"{path}: NaN or Inf entries")
    return data
