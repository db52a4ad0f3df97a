"""End-to-end orchestration: corpus and checkpoint, scenario batches,
render -> features -> clustering -> membership -> scores.

Seed layout: evaluation scenarios use config.seed + index directly, and
their two source signals use disjoint seed bases.  The pretraining corpus
lives in its own reserved seed range so it never overlaps an evaluation
batch.  Corpus recordings use a wider microphone spread than deployment
scenarios: the encoder needs to see diffuse-field frames as well as
near-field ones, which a tight deployment alone does not provide.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import acoustics, cfl, features, membership, nn
from .config import RunConfig

EVAL_SOURCE_SEED_BASES = (7000, 8000)
CORPUS_SCENARIO_SEED_BASE = 9000
CORPUS_SOURCE_SEED_BASES = (17000, 18000)
CORPUS_CLIP_SECONDS = 10.0
CORPUS_MANDATE_FACTOR = 0.95
CORPUS_DEPLOY_FACTOR = 1.2


def _win_seconds(samples: int) -> float:
    return samples / features.SAMPLE_RATE


def corpus_segments(config: RunConfig) -> list:
    """Synthetic pretraining corpus: reverberant two-source mixtures.

    Survey-style recordings, ten seconds per microphone, taken across a
    sequence of wide-spread scenarios until the configured segment count is
    reached.
    """
    fb = features.mel_filterbank(n_filters=config.n_mels)
    segments = []
    k = 0
    while len(segments) < config.pretrain_corpus:
        scenario = acoustics.generate_scenario(
            CORPUS_SCENARIO_SEED_BASE + k, n_nodes=config.n_nodes,
            room=config.room, t60=config.t60,
            mandate_factor=CORPUS_MANDATE_FACTOR,
            deploy_factor=CORPUS_DEPLOY_FACTOR)
        s1 = acoustics.synth_source_signal(
            0, CORPUS_SOURCE_SEED_BASES[0] + k, CORPUS_CLIP_SECONDS)
        s2 = acoustics.synth_source_signal(
            1, CORPUS_SOURCE_SEED_BASES[1] + k, CORPUS_CLIP_SECONDS)
        for node in range(scenario.n_nodes):
            clip = acoustics.render_node_signal(scenario, s1, s2, node)
            segments.extend(features.lmbe_segments(
                clip, fb, node, win_s=_win_seconds(config.win),
                hop_s=_win_seconds(config.hop)))
            if len(segments) >= config.pretrain_corpus:
                break
        k += 1
    return segments[:config.pretrain_corpus]


def pretrain_model(config: RunConfig):
    """Build, pretrain on the synthetic corpus, return (model, loss trace).

    Weight init draws from config.pretrain_seed, not the experiment seed:
    the pretrained encoder is part of the method, so varying the experiment
    seed reuses the same checkpoint recipe instead of quietly changing it.
    """
    model = nn.build_autoencoder(seed=config.pretrain_seed)
    losses = nn.pretrain(model, corpus_segments(config),
                         epochs=config.pretrain_epochs, lr=config.lr)
    return model, losses


def node_feature_sets(scenario: acoustics.Scenario, config: RunConfig) -> list:
    """Per-node LMBE segment lists for one scenario's rendered signals."""
    fb = features.mel_filterbank(n_filters=config.n_mels)
    s1 = acoustics.synth_source_signal(
        0, EVAL_SOURCE_SEED_BASES[0] + scenario.seed, config.clip_seconds)
    s2 = acoustics.synth_source_signal(
        1, EVAL_SOURCE_SEED_BASES[1] + scenario.seed, config.clip_seconds)
    sets = []
    for node in range(scenario.n_nodes):
        clip = acoustics.render_node_signal(scenario, s1, s2, node)
        sets.append(features.lmbe_segments(clip, fb, node,
                                           win_s=_win_seconds(config.win),
                                           hop_s=_win_seconds(config.hop)))
    return sets


def cfl_config(config: RunConfig) -> cfl.CflConfig:
    return cfl.CflConfig(eps1=config.eps1, eps2=config.eps2, eps3=config.eps3,
                         max_rounds=config.max_rounds, lr=config.lr,
                         seed=config.seed, recursive=config.recursive)


@dataclass
class ScenarioOutcome:
    """Everything one scenario contributes to the aggregate report."""

    seed: int
    scenario: acoustics.Scenario
    clusters: tuple
    log: cfl.RoundLog
    report: membership.MembershipReport | None
    evaluation: "EvalResult"

    @property
    def split_round(self):
        for record in self.log.records:
            if record.splits:
                return record.round_index
        return None


def run_scenario(scenario: acoustics.Scenario, model, config: RunConfig) -> ScenarioOutcome:
    """Full pipeline for one scenario with an already pretrained model."""
    from .evaluation import evaluate_run

    clients = node_feature_sets(scenario, config)
    result = cfl.run_unsupervised_cfl(clients, model, cfl_config(config))
    clusters = tuple(tuple(c) for c in result.clusters)

    report = None
    if len(clusters) == 2 and result.similarity is not None:
        report = membership.membership_values(
            result.similarity, clusters[0], clusters[1], lam=config.lam)
        mu = dict(report.mu)
    else:
        mu = {i: 1.0 for i in range(scenario.n_nodes)}

    evaluation = evaluate_run(scenario, clusters, mu, label_seed=config.seed,
                              thresholds=config.mv_thresholds)
    return ScenarioOutcome(seed=scenario.seed, scenario=scenario,
                           clusters=clusters, log=result.log, report=report,
                           evaluation=evaluation)


def _scenario_worker(args):
    checkpoint_path, scenario_doc, config = args
    model = nn.load_checkpoint(checkpoint_path)
    scenario = acoustics.scenario_from_dict(scenario_doc)
    outcome = run_scenario(scenario, model, config)
    return outcome


def run_batch(checkpoint_path, scenarios, config: RunConfig, workers: int = 1):
    """Run every scenario, isolating failures.

    Returns (outcomes, errors): outcomes in ascending seed order, errors as
    (seed, message) pairs.  Worker count never changes results; the reduce
    step sorts by scenario seed.
    """
    jobs = [(str(checkpoint_path), acoustics.scenario_to_dict(s), config)
            for s in scenarios]
    outcomes = []
    errors = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_scenario_worker, job) for job in jobs]
            for scenario, future in zip(scenarios, futures):
                try:
                    outcomes.append(future.result())
                except Exception as exc:
                    errors.append((scenario.seed, f"{type(exc).__name__}: {exc}"))
    else:
        for job, scenario in zip(jobs, scenarios):
            try:
                outcomes.append(_scenario_worker(job))
            except Exception as exc:
                errors.append((scenario.seed, f"{type(exc).__name__}: {exc}"))
    outcomes.sort(key=lambda o: o.seed)
    errors.sort()
    return outcomes, errors


def generate_batch(config: RunConfig):
    """The configured number of scenarios, seeds config.seed + index.

    Unsatisfiable seeds are skipped and reported, mirroring how a survey
    would drop an impossible room layout.  Returns (scenarios, skipped).
    """
    scenarios = []
    skipped = []
    for k in range(config.n_scenarios):
        seed = config.seed + k
        try:
            scenarios.append(acoustics.generate_scenario(
                seed, n_nodes=config.n_nodes, room=config.room, t60=config.t60))
        except acoustics.ScenarioGenerationError as exc:
            skipped.append((seed, str(exc)))
    return scenarios, skipped


# -- aggregation ---------------------------------------------------------------


@dataclass
class Aggregate:
    """Cross-scenario summary: distance matrix, fusion scores, split stats."""

    n_scenarios: int
    n_split: int
    distance: np.ndarray  # (2, 2) mean d-tilde, rows=cluster by source, cols=source
    distance_counts: np.ndarray
    assignment_accuracy: float
    fusion: dict  # mode -> {"accuracy": float, "f1": float}
    split_rounds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "n_scenarios": self.n_scenarios,
            "n_split": self.n_split,
            "mean_assignment_accuracy": self.assignment_accuracy,
            "distance": {
                "matrix": self.distance.tolist(),
                "counts": self.distance_counts.astype(int).tolist(),
                "own": self.mean_own_distance(),
                "opposing": self.mean_opposing_distance(),
            },
            "fusion": self.fusion,
            "split_rounds": self.split_rounds,
        }

    def mean_own_distance(self) -> float:
        return float(np.diag(self.distance).mean())

    def mean_opposing_distance(self) -> float:
        off = self.distance[(1, 0), (0, 1)]
        return float(off.mean())


def aggregate_outcomes(outcomes) -> Aggregate:
    """Averages across scenarios, aligning each cluster with the source its
    member majority points at (ties impossible: a majority class is defined
    per cluster).  Scenarios that never split contribute accuracy and fusion
    scores but no distance entries.
    """
    from .evaluation import score_fusion

    if not outcomes:
        raise ValueError("no outcomes to aggregate")
    dist_sum = np.zeros((2, 2))
    dist_count = np.zeros((2, 2))
    accs = []
    split_rounds = []
    fusion_preds = {}
    fusion_truths = []
    for outcome in outcomes:
        ev = outcome.evaluation
        accs.append(ev.assignment_accuracy)
        if outcome.split_round is not None:
            split_rounds.append(outcome.split_round)
        if len(outcome.clusters) == 2:
            for ci in range(2):
                row = ev.cluster_truth[ci]
                dist_sum[row] += ev.distance[ci]
                dist_count[row] += 1.0
        fusion_truths.append(ev.cluster_truth)
        for mode, pred in ev.predictions.items():
            fusion_preds.setdefault(mode, []).append(pred)

    fusion = {}
    for mode, preds in sorted(fusion_preds.items()):
        acc, f1 = score_fusion(preds, fusion_truths)
        fusion[mode] = {"accuracy": acc, "f1": f1}
    with np.errstate(invalid="ignore"):
        dist = np.where(dist_count > 0, dist_sum / np.maximum(dist_count, 1), np.nan)
    return Aggregate(n_scenarios=len(outcomes),
                     n_split=sum(1 for o in outcomes if o.split_round is not None),
                     distance=dist, distance_counts=dist_count,
                     assignment_accuracy=float(np.mean(accs)),
                     fusion=fusion, split_rounds=split_rounds)


# -- result files ----------------------------------------------------------------


def evaluation_to_dict(ev) -> dict:
    return {
        "schema_version": 1,
        "seed": ev.seed,
        "distance": ev.distance.tolist(),
        "assignment_accuracy": ev.assignment_accuracy,
        "cluster_truth": list(ev.cluster_truth),
        "predictions": {k: list(v) for k, v in ev.predictions.items()},
        "fallbacks": {k: list(v) for k, v in ev.fallbacks.items()},
    }


def membership_to_dict(report: membership.MembershipReport) -> dict:
    return {
        "schema_version": 1,
        "clusters": [list(c) for c in report.clusters],
        "mu": {str(i): report.mu[i] for i in sorted(report.mu)},
        "references": list(report.references),
        "lambda": report.lam,
        "threshold": report.threshold,
        "zeroed": sorted(report.zeroed),
    }


def outcome_to_dict(outcome: ScenarioOutcome) -> dict:
    return {
        "schema_version": 1,
        "seed": outcome.seed,
        "clusters": [list(c) for c in outcome.clusters],
        "split_round": outcome.split_round,
        "round_log": outcome.log.to_dict(),
        "membership": (None if outcome.report is None
                       else membership_to_dict(outcome.report)),
        "evaluation": evaluation_to_dict(outcome.evaluation),
    }


def save_json(doc: dict, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
