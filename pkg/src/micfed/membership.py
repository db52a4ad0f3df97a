"""Per-node membership values within a cluster partition.

After a split, each node gets a score in [0, 1] describing how well it fits
its cluster.  The score fuses the node's mean similarity to its own cluster
with its mean similarity to the other cluster, picks the worst-fitting node
as the cluster's reference, and grades everyone else by similarity to that
reference.  Low-scoring nodes can be zeroed with a threshold so downstream
fusion ignores them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .vecspace import SimilarityMatrix

DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class MembershipReport:
    """Membership values for one two-cluster partition.

    `mu` maps node id to the (possibly thresholded) membership value.
    `references` holds one reference node id per cluster, aligned with
    `clusters`.  `zeroed` is the set of node ids suppressed by the
    threshold; empty until `threshold_mvs` is applied.
    """

    clusters: tuple[tuple[int, ...], ...]
    mu: dict
    references: tuple[int, ...]
    lam: float
    threshold: float
    zeroed: frozenset


def _check_partition(matrix: SimilarityMatrix, c1, c2) -> tuple[tuple, tuple]:
    c1 = tuple(c1)
    c2 = tuple(c2)
    if not c1 or not c2:
        raise ValueError("both clusters must be nonempty")
    ids = set(matrix.client_ids)
    if set(c1) & set(c2) or set(c1) | set(c2) != ids:
        raise ValueError("clusters must partition the matrix's client ids")
    if len(c1) + len(c2) != len(ids):
        raise ValueError("duplicate ids in cluster tuples")
    return c1, c2


def mean_similarities(matrix: SimilarityMatrix, c1, c2):
    """Per-node mean intra-cluster and cross-cluster similarities.

    Returns (q, r) aligned with matrix.client_ids.  q_i averages over the
    node's own cluster excluding itself and is NaN for a singleton cluster;
    r_i averages over the opposite cluster.
    """
    c1, c2 = _check_partition(matrix, c1, c2)
    a = matrix.entries
    q = np.empty(matrix.size)
    r = np.empty(matrix.size)
    for own, other in ((c1, c2), (c2, c1)):
        own_idx = [matrix.index_of(i) for i in own]
        other_idx = [matrix.index_of(i) for i in other]
        for i in own_idx:
            mates = [j for j in own_idx if j != i]
            q[i] = np.mean(a[i, mates]) if mates else np.nan
            r[i] = np.mean(a[i, other_idx])
    return q, r


def _minmax(values: np.ndarray) -> np.ndarray:
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.full(values.shape, 0.5)
    return (values - lo) / (hi - lo)


def fused_scores(q: np.ndarray, r: np.ndarray, lam: float) -> np.ndarray:
    """Weighted sum of the min-max normalized similarity means of one cluster.

    Constant q or r vectors normalize to all 0.5 so the fusion keeps its
    total weight instead of dividing by zero.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if q.shape != r.shape:
        raise ValueError("q and r must cover the same cluster")
    return lam * _minmax(q) + (1.0 - lam) * _minmax(r)


def membership_values(matrix: SimilarityMatrix, c1, c2,
                      lam: float = DEFAULT_LAMBDA) -> MembershipReport:
    """Score every node by similarity to its cluster's reference node.

    The reference is the cluster's worst-fitting node (lowest fused score,
    ties to the lowest id); raw scores a_{i,ref} are then min-max normalized
    within the cluster.  A singleton cluster's node gets 1; a cluster whose
    raw scores are all equal also maps to all ones.
    """
    c1, c2 = _check_partition(matrix, c1, c2)
    q, r = mean_similarities(matrix, c1, c2)
    mu = {}
    references = []
    for cluster in (c1, c2):
        members = sorted(cluster)
        if len(members) == 1:
            references.append(members[0])
            mu[members[0]] = 1.0
            continue
        idx = [matrix.index_of(i) for i in members]
        p = fused_scores(q[idx], r[idx], lam)
        ref = members[int(np.flatnonzero(p == p.min())[0])]
        references.append(ref)
        raw = matrix.entries[idx, matrix.index_of(ref)]
        if raw.max() == raw.min():
            normed = np.ones_like(raw)
        else:
            normed = (raw - raw.min()) / (raw.max() - raw.min())
        for node, value in zip(members, normed):
            mu[node] = float(value)
    return MembershipReport(clusters=(c1, c2), mu=mu,
                            references=tuple(references), lam=float(lam),
                            threshold=0.0, zeroed=frozenset())


def threshold_mvs(report: MembershipReport, v: float) -> MembershipReport:
    """Zero every membership value at or below v and record which ones."""
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {v}")
    zeroed = frozenset(i for i, m in report.mu.items() if m <= v)
    mu = {i: (0.0 if i in zeroed else m) for i, m in report.mu.items()}
    return replace(report, mu=mu, threshold=float(v),
                   zeroed=report.zeroed | zeroed)


def csv_rows(report: MembershipReport):
    """Per-node rows (node id, cluster index, mu, zeroed flag) for export."""
    rows = []
    for ci, cluster in enumerate(report.clusters):
        for node in cluster:
            rows.append((node, ci, report.mu[node], node in report.zeroed))
    rows.sort()
    return rows
