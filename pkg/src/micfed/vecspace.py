"""Parameter-vector algebra: cosine similarities and similarity matrices.

Client updates are plain 1-D float64 arrays.  Everything here is pure and
safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateUpdateError(ValueError):
    """A client update vector has zero norm (training produced no change)."""

    def __init__(self, message: str, client_id=None):
        super().__init__(message)
        self.client_id = client_id


def as_param_vector(values) -> np.ndarray:
    """Validate and convert to a 1-D float64 parameter vector."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"parameter vector must be non-empty and 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("parameter vector contains non-finite entries")
    return v


def cosine_similarity(u, v) -> float:
    """Cosine similarity <u,v> / (||u|| ||v||) of two update vectors.

    Raises DegenerateUpdateError if either vector has zero norm; a vanished
    update indicates a training bug upstream and is never mapped to 0.
    """
    u = as_param_vector(u)
    v = as_param_vector(v)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateUpdateError("zero-norm update vector")
    return float(np.dot(u, v) / (nu * nv))


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric matrix of pairwise cosine similarities between client updates."""

    entries: np.ndarray
    client_ids: tuple = field(default_factory=tuple)

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"entries must be square, got shape {e.shape}")
        ids = tuple(self.client_ids) if self.client_ids else tuple(range(e.shape[0]))
        if len(ids) != e.shape[0]:
            raise ValueError("client_ids length must match matrix size")
        if len(set(ids)) != len(ids):
            raise ValueError("client_ids must be distinct")
        if not np.array_equal(e, e.T):
            raise ValueError("entries must be symmetric")
        if e.min() < -1.0 or e.max() > 1.0:
            raise ValueError("entries must lie in [-1, 1]")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "client_ids", ids)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def index_of(self, client_id) -> int:
        return self.client_ids.index(client_id)


def similarity_matrix(updates, ids=None) -> SimilarityMatrix:
    """Pairwise cosine similarities of client updates.

    Each pair is computed once and mirrored, so the result is symmetric
    bitwise.  The diagonal is set to exactly 1.  A zero-norm update raises
    DegenerateUpdateError carrying the offending client id.
    """
    vecs = [as_param_vector(u) for u in updates]
    if not vecs:
        raise ValueError("need at least one update")
    n = len(vecs)
    ids = tuple(ids) if ids is not None else tuple(range(n))
    if len(ids) != n:
        raise ValueError("ids length must match number of updates")
    dim = vecs[0].size
    for cid, v in zip(ids, vecs):
        if v.size != dim:
            raise ValueError(f"update of client {cid} has length {v.size}, expected {dim}")
    norms = np.array([np.linalg.norm(v) for v in vecs])
    for cid, nrm in zip(ids, norms):
        if nrm == 0.0:
            raise DegenerateUpdateError(f"client {cid} produced a zero-norm update", client_id=cid)
    a = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            c = np.dot(vecs[i], vecs[j]) / (norms[i] * norms[j])
            c = min(1.0, max(-1.0, c))
            a[i, j] = c
            a[j, i] = c
    return SimilarityMatrix(a, ids)
