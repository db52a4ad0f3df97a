"""Clustering quality metrics and a synthetic downstream fusion task.

Scores a finished run three ways: geometrically (how close each cluster's
membership-weighted centroid sits to its dominant source, normalized by the
source separation), combinatorially (node-assignment accuracy under the best
cluster-to-source bijection), and functionally (accuracy/F1 of per-cluster
label fusion, where node labels come from a synthetic classifier whose error
rate grows with distance from the dominant source).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acoustics import Scenario, critical_distance, dominance_labels

DEFAULT_THRESHOLDS = (0.0, 0.5, 0.9)

_LABEL_ERR_FLOOR = 0.05
_LABEL_ERR_CEIL = 0.45
_LABEL_ERR_SLOPE = 0.2  # per critical-distance unit beyond the first


def mv_weighted_centroid(positions, mu) -> np.ndarray:
    """Membership-weighted mean position, sum(mu_i p_i) / sum(mu_i)."""
    positions = np.asarray(positions, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[0] != mu.shape[0]:
        raise ValueError("positions must be (n, dim) aligned with mu")
    if np.any(mu < 0):
        raise ValueError("membership weights must be nonnegative")
    total = mu.sum()
    if total <= 0.0:
        raise ValueError("all membership weights are zero")
    return (mu[:, None] * positions).sum(axis=0) / total


def normalized_cluster_distance(centroid, s_z, s_1, s_2) -> float:
    """Distance from centroid to source s_z, in units of source separation."""
    centroid = np.asarray(centroid, dtype=np.float64)
    s_z = np.asarray(s_z, dtype=np.float64)
    span = np.linalg.norm(np.asarray(s_1, dtype=np.float64)
                          - np.asarray(s_2, dtype=np.float64))
    if span == 0.0:
        raise ValueError("sources coincide; normalization undefined")
    return float(np.linalg.norm(s_z - centroid) / span)


def assignment_accuracy(clusters, truth) -> float:
    """Best-bijection fraction of nodes whose cluster matches their source.

    A run that never split (one cluster) scores the 0.5 chance baseline so
    batch evaluation can still aggregate it.
    """
    truth = np.asarray(truth)
    if len(clusters) == 1:
        return 0.5
    if len(clusters) != 2:
        raise ValueError(f"expected 2 clusters, got {len(clusters)}")
    pred = np.empty(truth.shape, dtype=int)
    for ci, cluster in enumerate(clusters):
        for node in cluster:
            pred[node] = ci
    direct = float(np.mean(pred == truth))
    return max(direct, 1.0 - direct)


def fuse_node_labels(labels, clusters, mu, v, mode):
    """Per-cluster class from node labels, by majority or MV-weighted vote.

    `labels` maps node id to a binary class.  Membership values at or below
    v are zeroed first; a cluster whose weights all vanish falls back to the
    plain majority and is flagged.  Plain-mode ties go to class 0; the
    MV-weighted score rounds 0.5 up to class 1.
    Returns (per-cluster classes, per-cluster fallback flags).
    """
    if mode not in ("plain-mode", "mv-weighted"):
        raise ValueError(f"unknown fusion mode {mode!r}")
    classes = []
    fallbacks = []
    for cluster in clusters:
        node_labels = np.array([labels[i] for i in cluster], dtype=np.float64)
        if np.any((node_labels != 0) & (node_labels != 1)):
            raise ValueError("node labels must be binary")
        majority = int(node_labels.sum() * 2 > len(cluster))
        if mode == "plain-mode":
            classes.append(majority)
            fallbacks.append(False)
            continue
        weights = np.array([mu[i] for i in cluster], dtype=np.float64)
        weights[weights <= v] = 0.0
        total = weights.sum()
        if total == 0.0:
            classes.append(majority)
            fallbacks.append(True)
            continue
        classes.append(int((weights @ node_labels) / total >= 0.5))
        fallbacks.append(False)
    return tuple(classes), tuple(fallbacks)


def _binary_f1(pred, truth) -> float:
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0  # no positives anywhere: vacuously perfect
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2 * tp + fp + fn)


def score_fusion(predictions, truths):
    """Macro-averaged (accuracy, F1) of per-scenario cluster predictions."""
    if not predictions or len(predictions) != len(truths):
        raise ValueError("need one prediction tuple per scenario")
    accs = []
    f1s = []
    for pred, truth in zip(predictions, truths):
        pred = np.asarray(pred, dtype=int)
        truth = np.asarray(truth, dtype=int)
        if pred.shape != truth.shape:
            raise ValueError("prediction/truth shape mismatch")
        accs.append(float(np.mean(pred == truth)))
        f1s.append(_binary_f1(pred, truth))
    return float(np.mean(accs)), float(np.mean(f1s))


def label_error_probability(distance: float, d_c: float) -> float:
    """Synthetic classifier error rate at a given distance from its source.

    Flat at the floor inside the critical distance, then rises linearly,
    capped below chance.
    """
    excess = max(distance / d_c - 1.0, 0.0)
    return float(np.clip(_LABEL_ERR_FLOOR + _LABEL_ERR_SLOPE * excess,
                         _LABEL_ERR_FLOOR, _LABEL_ERR_CEIL))


def synth_node_labels(scenario: Scenario, seed: int):
    """Per-node noisy class labels for the downstream fusion task.

    Each node observes its dominant source's class but misclassifies with a
    probability that grows with its distance from that source, mirroring how
    degraded SNR hurts a real classifier.  Deterministic per (scenario, seed).
    """
    truth = dominance_labels(scenario)
    dist = scenario.distances()
    d_c = scenario.critical_distance
    rng = np.random.default_rng(np.random.SeedSequence((scenario.seed, 0xA4, int(seed))))
    labels = {}
    for i in range(scenario.n_nodes):
        own = int(truth[i])
        p_err = label_error_probability(float(dist[own, i]), d_c)
        flip = rng.random() < p_err
        labels[i] = own ^ int(flip)
    return labels


@dataclass(frozen=True)
class EvalResult:
    """Scores for one scenario's run.

    `distance` holds one row per cluster with the normalized distance to
    each source; `cluster_truth` is the per-cluster majority class;
    `predictions`/`fallbacks` map fusion mode keys (``plain`` or ``mv@<v>``)
    to per-cluster outputs.
    """

    seed: int
    distance: np.ndarray
    assignment_accuracy: float
    cluster_truth: tuple
    predictions: dict
    fallbacks: dict


def evaluate_run(scenario: Scenario, clusters, mu, label_seed: int = 0,
                 thresholds=DEFAULT_THRESHOLDS) -> EvalResult:
    """Score one run's final partition against the scenario's geometry.

    `mu` maps node id to membership value (1.0 for every node when no
    membership report exists, e.g. single-cluster runs).
    """
    truth = dominance_labels(scenario)
    distance = np.empty((len(clusters), 2))
    cluster_truth = []
    for ci, cluster in enumerate(clusters):
        weights = np.array([mu[i] for i in cluster], dtype=np.float64)
        positions = scenario.nodes[list(cluster)]
        if weights.sum() <= 0.0:
            weights = np.ones_like(weights)
        centroid = mv_weighted_centroid(positions, weights)
        for sj in range(2):
            distance[ci, sj] = normalized_cluster_distance(
                centroid, scenario.sources[sj],
                scenario.sources[0], scenario.sources[1])
        members = truth[list(cluster)]
        cluster_truth.append(int(members.sum() * 2 > len(cluster)))

    labels = synth_node_labels(scenario, label_seed)
    predictions = {}
    fallbacks = {}
    predictions["plain"], fallbacks["plain"] = fuse_node_labels(
        labels, clusters, mu, 0.0, "plain-mode")
    for v in thresholds:
        key = f"mv@{v:g}"
        predictions[key], fallbacks[key] = fuse_node_labels(
            labels, clusters, mu, v, "mv-weighted")
    return EvalResult(seed=scenario.seed, distance=distance,
                      assignment_accuracy=assignment_accuracy(clusters, truth),
                      cluster_truth=tuple(cluster_truth),
                      predictions=predictions, fallbacks=fallbacks)
