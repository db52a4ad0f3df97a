"""Unsupervised clustered federated learning over autoencoder updates.

The server keeps one bottleneck parameter vector per cluster.  Each round,
every client trains one local epoch from its cluster's parameters and
returns the masked delta; the server aggregates deltas per cluster with
data-size weights and tracks the mean and maximum delta norms.  When a
cluster's mean norm has stagnated low while some member still moves (the
classic sign of incongruent client distributions), the cluster is split in
two along the least-similar boundary of the pairwise cosine-similarity
matrix of the current round's deltas.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .vecspace import SimilarityMatrix, similarity_matrix

DEFAULT_EPS1 = 0.0134
DEFAULT_EPS2 = 0.005
DEFAULT_EPS3 = 0.0007
DEFAULT_MAX_ROUNDS = 25
DEFAULT_LR = 0.1


@dataclass(frozen=True)
class CflConfig:
    """Thresholds and loop limits for one CFL run."""

    eps1: float = DEFAULT_EPS1
    eps2: float = DEFAULT_EPS2
    eps3: float = DEFAULT_EPS3
    max_rounds: int = DEFAULT_MAX_ROUNDS
    lr: float = DEFAULT_LR
    seed: int = 0
    recursive: bool = False

    def __post_init__(self):
        if min(self.eps1, self.eps2, self.eps3) <= 0:
            raise ValueError("thresholds must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")


@dataclass
class Cluster:
    """One cluster: member ids, its parameters, and its norm history."""

    members: tuple
    theta: np.ndarray
    history: list = field(default_factory=list)  # (mean_norm, max_norm) per round

    def __post_init__(self):
        self.members = tuple(sorted(int(i) for i in self.members))
        self.theta = np.asarray(self.theta, dtype=np.float64)


@dataclass
class ClusterState:
    """The full cluster list; always a partition of the client ids."""

    clusters: list
    client_ids: tuple

    def validate(self):
        seen = [i for c in self.clusters for i in c.members]
        if sorted(seen) != sorted(self.client_ids):
            raise AssertionError("clusters do not partition the client set")
        for c in self.clusters:
            if c.theta.size != nn.BOTTLENECK_PARAMS:
                raise AssertionError("cluster parameters have the wrong length")


@dataclass(frozen=True)
class CongruenceStats:
    """Norm statistics of one cluster's deltas in one round.

    For stats computed from real delta sets, mean_norm <= max_norm always
    (triangle inequality); the constructor accepts arbitrary triples so
    threshold logic can be exercised directly.
    """

    mean_norm: float
    max_norm: float
    grad: float | None  # undefined on a cluster's first round


def client_update(model: nn.Autoencoder, theta_c: np.ndarray, data, lr: float) -> np.ndarray:
    """One local epoch from the cluster parameters; returns the masked delta."""
    theta_c = np.asarray(theta_c, dtype=np.float64)
    if theta_c.size != nn.BOTTLENECK_PARAMS:
        raise ValueError(f"expected {nn.BOTTLENECK_PARAMS} cluster parameters, "
                         f"got {theta_c.size}")
    data = list(data)
    if not data:
        raise ValueError("client has no data")
    local = model.copy()
    nn.load_masked(local, theta_c)
    return nn.sgd_epoch(local, data, lr, mask_only=True)


class _ClientWorker:
    """Per-client trainer that reuses frozen encoder work across rounds.

    Everything before the bottleneck stays frozen during clustering, so each
    segment's encoder output and pool positions never change; they are
    computed once and replayed while the decoder pass runs fresh each step.
    Produces deltas bitwise-equal to client_update on the same inputs.
    """

    def __init__(self, model: nn.Autoencoder, data):
        self.local = model.copy()
        if not (self.local.frozen and self.local.masked_count == nn.BOTTLENECK_PARAMS):
            raise ValueError("worker needs a bottleneck-frozen model")
        self.data = list(data)
        self.dense = self.local._dense_index()
        self.segments = None  # built on first update

    def _prepare(self):
        self.segments = []
        for x in self.data:
            _, cache = nn.forward(self.local, x)
            self.segments.append((x, cache.inputs[self.dense], cache.pool_indices))

    def _decoder_cache(self, enc_out, pool_indices):
        local = self.local
        n = len(local.layers)
        inputs = [None] * n
        outputs = [None] * n
        a = enc_out
        for i in range(self.dense, n):
            spec = local.layers[i]
            inputs[i] = a
            if spec.kind == "dense":
                z = a @ local.weights[i] + local.biases[i]
            elif spec.kind == "maxunpool":
                z = nn._scatter_pool(a, pool_indices[spec.pool_source])
            else:
                z = nn._convt2d(a, local.weights[i], local.biases[i])
            a = nn._activate(z, spec.activation)
            outputs[i] = a
        return nn.ForwardCache(inputs, outputs, pool_indices, local, local._version)

    def update(self, theta_c: np.ndarray, lr: float) -> np.ndarray:
        """One local epoch from the cluster parameters; returns the delta."""
        theta_c = np.asarray(theta_c, dtype=np.float64)
        if self.segments is None:
            self._prepare()
        local = self.local
        wd = local.weights[self.dense]
        wd[...] = theta_c.reshape(wd.shape)
        local._version += 1
        step = lr * nn.STEP_SCALE
        for x, enc_out, pool_indices in self.segments:
            cache = self._decoder_cache(enc_out, pool_indices)
            wd -= step * nn._backprop(local, cache, x, bottleneck_only=True)
            local._version += 1
        return wd.ravel() - theta_c


def cluster_aggregate(theta_c: np.ndarray, deltas) -> np.ndarray:
    """Add the data-size-weighted sum of deltas to the cluster parameters.

    `deltas` is a sequence of (delta, data_size) pairs; callers supply them
    in ascending client-id order so the accumulation order is fixed.
    """
    theta_c = np.asarray(theta_c, dtype=np.float64)
    deltas = list(deltas)
    total = sum(size for _, size in deltas)
    if total <= 0:
        raise ValueError("total data size must be positive")
    acc = np.zeros_like(theta_c)
    for delta, size in deltas:
        delta = np.asarray(delta, dtype=np.float64)
        if delta.shape != theta_c.shape:
            raise ValueError("delta length does not match cluster parameters")
        acc += (size / total) * delta
    return theta_c + acc


def congruence_stats(deltas, history) -> CongruenceStats:
    """Mean-of-deltas norm, max member norm, and the round-to-round change.

    The grad entry is the backward difference of the mean norm against the
    previous round in `history`; it is None when the cluster has no history.
    """
    deltas = [np.asarray(d, dtype=np.float64) for d in deltas]
    if not deltas:
        raise ValueError("need at least one delta")
    stack = np.stack(deltas)
    mean_norm = float(np.linalg.norm(stack.mean(axis=0)))
    max_norm = float(np.max(np.linalg.norm(stack, axis=1)))
    grad = None
    if history:
        grad = abs(mean_norm - history[-1][0])
    return CongruenceStats(mean_norm, max_norm, grad)


def should_split(stats: CongruenceStats, eps1: float, eps2: float, eps3: float) -> bool:
    """True when updates have stagnated (mean low, grad low) but some client
    still moves (max high); always false on a cluster's first round."""
    if stats.grad is None:
        return False
    return stats.mean_norm <= eps1 and stats.max_norm >= eps2 and stats.grad <= eps3


# -- bipartitioning -----------------------------------------------------------


def bipartition(sim: SimilarityMatrix):
    """Split clients into the two groups minimizing the maximum cross-group
    similarity.

    Realized as single-linkage agglomeration: repeatedly merge the most
    similar pair of groups until two remain (equivalently, cut the weakest
    edge of the maximum spanning tree).  With distinct similarities the
    minimizer is unique; exact ties are resolved by the fixed edge order
    (descending similarity, then ascending index pair).  Returns (c1, c2)
    as ascending client-id tuples with c1 holding the lowest id.
    """
    m = sim.size
    if m < 2:
        raise ValueError("need at least 2 clients to bipartition")
    edges = sorted(((i, j) for i in range(m) for j in range(i + 1, m)),
                   key=lambda e: (-sim.entries[e[0], e[1]], e[0], e[1]))
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    groups = m
    for i, j in edges:
        if groups == 2:
            break
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
            groups -= 1
    comps = {}
    for i in range(m):
        comps.setdefault(find(i), []).append(i)
    a, b = comps.values()
    ids = sim.client_ids
    c1 = tuple(sorted(ids[i] for i in a))
    c2 = tuple(sorted(ids[i] for i in b))
    if min(c2) < min(c1):
        c1, c2 = c2, c1
    return c1, c2


def max_cross_similarity(sim: SimilarityMatrix, c1, c2) -> float:
    """Largest similarity between any member of c1 and any member of c2."""
    i1 = [sim.index_of(i) for i in c1]
    i2 = [sim.index_of(i) for i in c2]
    return float(sim.entries[np.ix_(i1, i2)].max())


def brute_force_bipartition(sim: SimilarityMatrix):
    """Exhaustive reference: try every bipartition, return (c1, c2, optimum).

    Ties on the objective are broken toward the lexicographically smallest
    c1 (the side holding the lowest client id).
    """
    m = sim.size
    if not 2 <= m <= 20:
        raise ValueError("brute force supports 2..20 clients")
    ids = sim.client_ids
    order = np.argsort(ids)
    low = order[0]  # index of the lowest client id, fixed to side c1
    rest = [i for i in range(m) if i != low]
    best = None
    for mask in range(2 ** (m - 1) - 1):
        side1 = [low] + [rest[k] for k in range(m - 1) if mask >> k & 1]
        side2 = [i for i in rest if i not in side1]
        cross = float(sim.entries[np.ix_(side1, side2)].max())
        c1 = tuple(sorted(ids[i] for i in side1))
        if best is None or cross < best[0] or (cross == best[0] and c1 < best[1]):
            c2 = tuple(sorted(ids[i] for i in side2))
            best = (cross, c1, c2)
    return best[1], best[2], best[0]


# -- round log ----------------------------------------------------------------


@dataclass(frozen=True)
class SplitEvent:
    parent: tuple
    children: tuple  # (c1, c2)
    similarity: SimilarityMatrix


@dataclass
class RoundRecord:
    round_index: int  # 1-based
    cluster_stats: list  # (members, CongruenceStats, split flag)
    splits: list


@dataclass
class RoundLog:
    """Everything observable about one CFL run, JSON-serializable."""

    max_rounds: int
    records: list = field(default_factory=list)
    split_occurred: bool = False

    def append(self, record: RoundRecord):
        if not 1 <= record.round_index <= self.max_rounds:
            raise ValueError(f"round index {record.round_index} outside "
                             f"[1, {self.max_rounds}]")
        self.records.append(record)

    def to_dict(self) -> dict:
        rounds = []
        for rec in self.records:
            clusters = [{
                "members": list(members),
                "mean_norm": stats.mean_norm,
                "max_norm": stats.max_norm,
                "grad": stats.grad,
                "split": split,
            } for members, stats, split in rec.cluster_stats]
            splits = [{
                "parent": list(ev.parent),
                "children": [list(ev.children[0]), list(ev.children[1])],
                "similarity": {
                    "client_ids": list(ev.similarity.client_ids),
                    "entries": ev.similarity.entries.tolist(),
                },
            } for ev in rec.splits]
            rounds.append({"round": rec.round_index, "clusters": clusters,
                           "splits": splits})
        return {"schema_version": 1, "max_rounds": self.max_rounds,
                "split_occurred": self.split_occurred, "rounds": rounds}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")


@dataclass
class CflResult:
    """Final clusters plus the artifacts downstream stages need."""

    clusters: tuple            # tuple of ascending member-id tuples
    log: RoundLog
    delta_snapshot: dict       # client id -> masked delta at split (or last) round
    similarity: SimilarityMatrix | None  # snapshot from the first split, if any
    state: ClusterState


def run_unsupervised_cfl(clients, model: nn.Autoencoder, config: CflConfig) -> CflResult:
    """Cluster clients by update similarity.

    `clients` is a list of per-client training data (index == client id).
    The model's non-bottleneck parameters are frozen and the bottleneck is
    re-initialized from config.seed.  Rounds proceed until a split fires
    (once, unless config.recursive) or max_rounds elapse; the log records
    norms, split events, and the similarity snapshot.
    """
    clients = [list(d) for d in clients]
    if not clients or any(len(d) == 0 for d in clients):
        raise ValueError("every client needs at least one data segment")
    work = model.copy()
    nn.freeze_except_bottleneck(work)
    nn.reinit_trainable(work, config.seed)
    workers = [_ClientWorker(work, d) for d in clients]

    all_ids = tuple(range(len(clients)))
    state = ClusterState([Cluster(all_ids, nn.extract_masked(work))], all_ids)
    log = RoundLog(config.max_rounds)
    snapshot = {}
    first_similarity = None

    for round_index in range(1, config.max_rounds + 1):
        next_clusters = []
        record = RoundRecord(round_index, [], [])
        split_this_round = False
        for cluster in sorted(state.clusters, key=lambda c: c.members[0]):
            deltas = {i: workers[i].update(cluster.theta, config.lr)
                      for i in cluster.members}
            ordered = [deltas[i] for i in cluster.members]
            stats = congruence_stats(ordered, cluster.history)
            cluster.history.append((stats.mean_norm, stats.max_norm))
            split = (len(cluster.members) >= 2
                     and should_split(stats, config.eps1, config.eps2, config.eps3))
            record.cluster_stats.append((cluster.members, stats, split))
            snapshot.update(deltas)
            if split:
                sim = similarity_matrix(ordered, ids=cluster.members)
                c1, c2 = bipartition(sim)
                sizes = {i: len(clients[i]) for i in cluster.members}
                children = []
                for side in (c1, c2):
                    theta = cluster_aggregate(
                        cluster.theta, [(deltas[i], sizes[i]) for i in side])
                    children.append(Cluster(side, theta))
                record.splits.append(SplitEvent(cluster.members, (c1, c2), sim))
                next_clusters.extend(children)
                split_this_round = True
                if first_similarity is None:
                    first_similarity = sim
            else:
                sizes = [(deltas[i], len(clients[i])) for i in cluster.members]
                cluster.theta = cluster_aggregate(cluster.theta, sizes)
                next_clusters.append(cluster)
        state = ClusterState(next_clusters, all_ids)
        state.validate()
        log.append(record)
        if split_this_round:
            log.split_occurred = True
            if not config.recursive:
                break

    clusters = tuple(sorted((c.members for c in state.clusters),
                            key=lambda ms: ms[0]))
    return CflResult(clusters, log, snapshot, first_similarity, state)
