"""Orthogonal Procrustes and cross-subject common-space diagnostics."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ShapeError, ZeroNormError
from .tensor import as_matrix, principal_directions, svd

# relative threshold below which a singular value of X^T Y counts as zero
RANK_TOL = 1e-12
# cosine distances are rounded before ranking so that analytically equal
# distances tie exactly and fall back to index order
KNN_DECIMALS = 12


class RankDeficientWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ProcrustesResult:
    rotation: np.ndarray
    singular_values: np.ndarray
    rank_deficient: bool
    warning: str | None = None


def procrustes_fit(X, Y):
    """Orthogonal ``R`` minimising ``||X R - Y||_F`` with diagnostic info.

    No centering or scaling is applied; center beforehand if needed.
    """
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape != Y.shape:
        raise ShapeError(f"procrustes needs equal shapes, got {X.shape} and {Y.shape}")
    n, d = X.shape
    if n < d:
        raise ShapeError(f"procrustes needs n >= d, got n={n}, d={d}")
    dec = svd(X.T @ Y)
    R = dec.U @ dec.V.T
    top = dec.S[0] if dec.S.size else 0.0
    deficient = bool(top == 0.0 or dec.S[-1] <= RANK_TOL * top)
    msg = None
    if deficient:
        rank = int(np.sum(dec.S > RANK_TOL * top)) if top > 0 else 0
        msg = f"X^T Y has rank {rank} < {d}; rotation is not unique"
    return ProcrustesResult(rotation=R, singular_values=dec.S, rank_deficient=deficient, warning=msg)


def procrustes(X, Y):
    """Return the orthogonal Procrustes rotation; warns when it is not unique."""
    result = procrustes_fit(X, Y)
    if result.rank_deficient:
        warnings.warn(result.warning, RankDeficientWarning, stacklevel=2)
    return result.rotation


def _unit_rows(M, label):
    norms = np.linalg.norm(M, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ZeroNormError(f"{label}: item {int(bad[0])} has zero norm")
    return M / norms[:, None]


def _check_matched(subjects):
    if len(subjects) < 1:
        raise ShapeError("need at least one subject")
    mats = [as_matrix(s, f"subject {i}") for i, s in enumerate(subjects)]
    shape = mats[0].shape
    for i, m in enumerate(mats):
        if m.shape != shape:
            raise ShapeError(f"subject {i} has shape {m.shape}, expected {shape}")
    return mats


def mean_cosine(A, B):
    A = _unit_rows(as_matrix(A, "A"), "A")
    B = _unit_rows(as_matrix(B, "B"), "B")
    if A.shape != B.shape:
        raise ShapeError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.mean(np.sum(A * B, axis=1)))


def mean_cosine_matrix(subjects):
    """Entry (a, b) is the item-averaged cosine between subjects a and b."""
    mats = _check_matched(subjects)
    units = [_unit_rows(m, f"subject {i}") for i, m in enumerate(mats)]
    s = len(units)
    out = np.eye(s)
    for a in range(s):
        for b in range(a + 1, s):
            c = float(np.mean(np.sum(units[a] * units[b], axis=1)))
            out[a, b] = out[b, a] = np.clip(c, -1.0, 1.0)
    return out


def mse_matrix(subjects):
    mats = _check_matched(subjects)
    s = len(mats)
    out = np.zeros((s, s))
    for a in range(s):
        for b in range(a + 1, s):
            out[a, b] = out[b, a] = float(np.mean((mats[a] - mats[b]) ** 2))
    return out


def procrustes_cosine_matrix(subjects):
    """Mean cosine after rotating subject a onto subject b with Procrustes."""
    mats = _check_matched(subjects)
    s = len(mats)
    out = np.eye(s)
    for a in range(s):
        for b in range(s):
            if a != b:
                R = procrustes_fit(mats[a], mats[b]).rotation
                out[a, b] = mean_cosine(mats[a] @ R, mats[b])
    return out


def _neighbors(M, k):
    U = _unit_rows(M, "embedding")
    dist = np.round(1.0 - U @ U.T, KNN_DECIMALS)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    return order[:, :k]


def knn_consistency(A, B, k):
    """Mean overlap fraction of the k cosine-nearest neighbours of each item."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = A.shape[0]
    if B.shape[0] != n:
        raise ShapeError(f"row counts differ: {n} vs {B.shape[0]}")
    if not 1 <= k <= n - 1:
        raise DimensionError(f"k={k} out of range [1, {n - 1}]")
    na = _neighbors(A, k)
    nb = _neighbors(B, k)
    overlap = [len(np.intersect1d(na[i], nb[i], assume_unique=True)) for i in range(n)]
    return float(np.mean(overlap) / k)


def eigvec_similarity(A, B, k):
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"feature dims differ: {A.shape[1]} vs {B.shape[1]}")
    da = principal_directions(A, k)
    db = principal_directions(B, k)
    return [float(min(1.0, abs(v))) for v in np.sum(da * db, axis=0)]


@dataclass
class AlignmentReport:
    subject_ids: list
    cosine_matrix: np.ndarray
    mse_matrix: np.ndarray
    knn_k: int
    knn_consistency: np.ndarray
    eig_k: int
    eigvec_similarity: list = field(default_factory=list)

    def to_dict(self):
        return {
            "subjects": list(self.subject_ids),
            "cosine": self.cosine_matrix.tolist(),
            "mse": self.mse_matrix.tolist(),
            "knn_k": self.knn_k,
            "knn": self.knn_consistency.tolist(),
            "eig_k": self.eig_k,
            "eig_sim": self.eigvec_similarity,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(
            subject_ids=list(d["subjects"]),
            cosine_matrix=np.asarray(d["cosine"], dtype=float),
            mse_matrix=np.asarray(d["mse"], dtype=float),
            knn_k=int(d["knn_k"]),
            knn_consistency=np.asarray(d["knn"], dtype=float),
            eig_k=int(d["eig_k"]),
            eigvec_similarity=d["eig_sim"],
        )


def alignment_report(subject_ids, embeddings, knn_k=50, eig_k=5, center=False):
    """Full pairwise diagnostic suite over item-matched embeddings.

    ``eig_sim[a][b]`` holds the k absolute cosines between index-matched
    principal directions of subjects a and b.
    """
    mats = _check_matched(embeddings)
    if len(subject_ids) != len(mats):
        raise ShapeError("one subject id per embedding matrix required")
    if center:
        mats = [m - m.mean(axis=0) for m in mats]
    s = len(mats)
    knn = np.eye(s)
    eig = [[None] * s for _ in range(s)]
    for a in range(s):
        eig[a][a] = eigvec_similarity(mats[a], mats[a], eig_k)
        for b in range(a + 1, s):
            knn[a, b] = knn[b, a] = knn_consistency(mats[a], mats[b], knn_k)
            eig[a][b] = eig[b][a] = eigvec_similarity(mats[a], mats[b], eig_k)
    return AlignmentReport(
        subject_ids=list(subject_ids),
        cosine_matrix=mean_cosine_matrix(mats),
        mse_matrix=mse_matrix(mats),
        knn_k=knn_k,
        knn_consistency=knn,
        eig_k=eig_k,
        eigvec_similarity=eig,
    )
