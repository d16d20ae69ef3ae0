"""Singular-direction projection and per-dimension equal-width binning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, SelectionError, ShapeError
from ..tensor import as_matrix, svd


def compute_bins(singular_values, w):
    """Bins per dimension, ``floor(w * s_j / s_1)``."""
    s = np.asarray(singular_values, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise SelectionError("singular values must be a non-empty vector")
    if not s[0] > 0:
        raise SelectionError(f"largest singular value must be positive, got {s[0]}")
    if np.any(s < 0) or np.any(np.diff(s) > 0):
        raise SelectionError("singular values must be non-negative and descending")
    if int(w) != w or w < 1:
        raise SelectionError(f"w must be a positive integer, got {w}")
    B = np.array([math.floor(int(w) * float(v) / float(s[0])) for v in s], dtype=np.int64)
    B[0] = int(w)
    return B


def principal_basis(W_ref, d):
    """First ``d`` left singular vectors (common-space side) of ``W_ref`` and their singular values."""
    W_ref = as_matrix(W_ref, "W_ref")
    dec = svd(W_ref)
    if not 1 <= d <= dec.U.shape[1]:
        raise DimensionError(f"d={d} exceeds the {dec.U.shape[1]} available singular directions")
    return dec.U[:, :d], dec.S[:d]


def project_onto_principal(Z, W_ref, d):
    Z = as_matrix(Z, "Z")
    W_ref = as_matrix(W_ref, "W_ref")
    if Z.shape[1] != W_ref.shape[0]:
        raise ShapeError(
            f"embeddings have {Z.shape[1]} columns but the weight matrix maps into {W_ref.shape[0]} dims"
        )
    U, _ = principal_basis(W_ref, d)
    return Z @ U


@dataclass
class BinnedUniverse:
    bin_counts: np.ndarray
    edges: list
    assignment: np.ndarray
    skipped_dims: list = field(default_factory=list)

    def __post_init__(self):
        self.bin_counts = np.asarray(self.bin_counts, dtype=np.int64)
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.assignment.ndim != 2 or self.assignment.shape[1] != self.bin_counts.size:
            raise ShapeError("assignment must be items x dims")
        active = self.active_dims
        # bin offsets for a flat (dim, bin) index over active dimensions
        self._offsets = np.zeros(self.dims, dtype=np.int64)
        self._offsets[active] = np.concatenate([[0], np.cumsum(self.bin_counts[active])[:-1]]) if active.size else []
        self.n_bins = int(self.bin_counts[active].sum())
        for j in active:
            col = self.assignment[:, j]
            if col.size and (col.min() < 0 or col.max() >= self.bin_counts[j]):
                raise ShapeError(f"dimension {j}: bin index outside [0, {self.bin_counts[j] - 1}]")
        self._flat = self.assignment[:, active] + self._offsets[active]
        occupied = np.zeros(self.n_bins, dtype=bool)
        occupied[self._flat.ravel()] = True
        self.empty_uncoverable = int(self.n_bins - occupied.sum())

    @property
    def dims(self):
        return int(self.bin_counts.size)

    @property
    def n_items(self):
        return int(self.assignment.shape[0])

    @property
    def active_dims(self):
        skipped = set(self.skipped_dims)
        return np.array([j for j in range(self.dims) if j not in skipped], dtype=np.int64)

    @property
    def flat_bins(self):
        """items x active-dims matrix of global bin ids."""
        return self._flat

    def item_masks(self):
        """Each item's covered bins as an integer bitmask."""
        return [sum(1 << int(b) for b in set(row)) for row in self._flat]


def bin_universe(projections, B):
    """Equal-width bins over each dimension's own [min, max] range.

    The upper edge value lands in the last bin.  Dimensions with zero bins or a
    degenerate range are recorded in ``skipped_dims``.
    """
    P = as_matrix(projections, "projections")
    B = np.asarray(B, dtype=np.int64)
    if B.size != P.shape[1]:
        raise ShapeError(f"{B.size} bin counts for {P.shape[1]} projection dims")
    assignment = np.zeros(P.shape, dtype=np.int64)
    edges, skipped = [], []
    for j in range(P.shape[1]):
        lo, hi = float(P[:, j].min()), float(P[:, j].max())
        if B[j] < 1 or not hi > lo:
            skipped.append(j)
            edges.append(np.array([lo, hi]) if hi > lo else np.array([lo]))
            continue
        width = (hi - lo) / B[j]
        idx = np.floor((P[:, j] - lo) / width).astype(np.int64)
        assignment[:, j] = np.clip(idx, 0, B[j] - 1)
        e = lo + width * np.arange(B[j] + 1)
        e[-1] = hi
        edges.append(e)
    return BinnedUniverse(B, edges, assignment, skipped)


def gap(S, u):
    """Number of bins, over non-skipped dims, not occupied by any item of ``S``."""
    S = np.asarray(sorted(set(int(i) for i in S)), dtype=np.int64)
    if S.size and (S[0] < 0 or S[-1] >= u.n_items):
        raise SelectionError(f"item index out of range [0, {u.n_items - 1}]")
    if S.size == 0:
        return u.n_bins
    return int(u.n_bins - np.unique(u.flat_bins[S].ravel()).size)


def extreme_items(projections, dim, count):
    """Indices of the ``count`` largest and smallest values along ``dim``.

    Both lists run from most to least extreme; ties resolve to the lower index.
    """
    P = as_matrix(projections, "projections")
    if not 0 <= dim < P.shape[1]:
        raise DimensionError(f"dim {dim} out of range [0, {P.shape[1] - 1}]")
    if not 0 <= count <= P.shape[0]:
        raise DimensionError(f"count {count} out of range [0, {P.shape[0]}]")
    col = P[:, dim]
    top = np.argsort(-col, kind="stable")[:count]
    bottom = np.argsort(col, kind="stable")[:count]
    return top.tolist(), bottom.tolist()
