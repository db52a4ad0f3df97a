"""Scoring metrics: centroids, normalized distances, accuracy, fusion."""

import numpy as np
import pytest

from micfed.acoustics import dominance_labels, generate_scenario
from micfed.evaluation import (
    assignment_accuracy,
    evaluate_run,
    fuse_node_labels,
    label_error_probability,
    mv_weighted_centroid,
    normalized_cluster_distance,
    score_fusion,
    synth_node_labels,
)


class TestCentroid:
    def test_equal_weights_is_mean(self):
        pos = np.array([[0.0, 0, 0], [2, 0, 0], [1, 3, 0]])
        np.testing.assert_allclose(mv_weighted_centroid(pos, np.ones(3)),
                                   pos.mean(axis=0), atol=1e-12)

    def test_single_nonzero_weight(self):
        pos = np.array([[0.0, 0, 0], [5, 1, 2]])
        np.testing.assert_array_equal(mv_weighted_centroid(pos, [0.0, 0.7]), pos[1])

    def test_one_three_weighting(self):
        pos = np.array([[0.0, 0, 0], [4.0, 0, 0]])
        np.testing.assert_allclose(mv_weighted_centroid(pos, [1.0, 3.0]),
                                   [3.0, 0.0, 0.0], atol=1e-12)

    def test_all_zero_weights(self):
        with pytest.raises(ValueError):
            mv_weighted_centroid(np.zeros((2, 3)), [0.0, 0.0])

    def test_negative_weights(self):
        with pytest.raises(ValueError):
            mv_weighted_centroid(np.zeros((2, 3)), [1.0, -0.5])


class TestNormalizedDistance:
    s1 = np.array([0.0, 0, 0])
    s2 = np.array([4.0, 0, 0])

    def test_at_source(self):
        assert normalized_cluster_distance(self.s1, self.s1, self.s1, self.s2) == 0.0

    def test_at_opposing_source(self):
        assert normalized_cluster_distance(self.s2, self.s1, self.s1, self.s2) == 1.0

    def test_midpoint(self):
        mid = (self.s1 + self.s2) / 2
        assert normalized_cluster_distance(mid, self.s1, self.s1, self.s2) == 0.5
        assert normalized_cluster_distance(mid, self.s2, self.s1, self.s2) == 0.5

    def test_coincident_sources(self):
        with pytest.raises(ValueError):
            normalized_cluster_distance(self.s1, self.s1, self.s2, self.s2)

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            pts = rng.standard_normal((4, 3))  # centroid, s_z, s_1, s_2
            q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            shift = rng.standard_normal(3)
            moved = pts @ q.T + shift
            a = normalized_cluster_distance(*pts)
            b = normalized_cluster_distance(*moved)
            assert a == pytest.approx(b, abs=1e-12)


class TestAssignmentAccuracy:
    truth = np.array([0, 1, 0, 1])

    def test_perfect(self):
        assert assignment_accuracy(((0, 2), (1, 3)), self.truth) == 1.0

    def test_inverted_labels(self):
        assert assignment_accuracy(((1, 3), (0, 2)), self.truth) == 1.0

    def test_one_of_sixteen_wrong(self):
        truth = np.array([0] * 8 + [1] * 8)
        clusters = (tuple(range(8)) + (8,), tuple(range(9, 16)))
        assert assignment_accuracy(clusters, truth) == pytest.approx(15 / 16)

    def test_single_cluster_baseline(self):
        assert assignment_accuracy(((0, 1, 2, 3),), self.truth) == 0.5

    def test_three_clusters_rejected(self):
        with pytest.raises(ValueError):
            assignment_accuracy(((0,), (1,), (2, 3)), self.truth)


class TestFuseNodeLabels:
    def test_unanimous(self):
        labels = {0: 1, 1: 1, 2: 1}
        mu = {0: 0.2, 1: 0.9, 2: 0.4}
        for mode in ("plain-mode", "mv-weighted"):
            classes, flags = fuse_node_labels(labels, ((0, 1, 2),), mu, 0.0, mode)
            assert classes == (1,)
            assert flags == (False,)

    def test_weighted_flips_majority(self):
        labels = {0: 1, 1: 1, 2: 0}
        mu = {0: 0.1, 1: 0.1, 2: 1.0}
        plain, _ = fuse_node_labels(labels, ((0, 1, 2),), mu, 0.0, "plain-mode")
        weighted, _ = fuse_node_labels(labels, ((0, 1, 2),), mu, 0.0, "mv-weighted")
        assert plain == (1,)
        assert weighted == (0,)

    def test_threshold_leaves_reference_only(self):
        labels = {0: 1, 1: 0, 2: 0}
        mu = {0: 1.0, 1: 0.8, 2: 0.1}
        classes, _ = fuse_node_labels(labels, ((0, 1, 2),), mu, 0.9, "mv-weighted")
        assert classes == (1,)

    def test_all_zeroed_falls_back_with_flag(self):
        labels = {0: 1, 1: 1, 2: 0}
        mu = {0: 0.0, 1: 0.0, 2: 0.0}
        classes, flags = fuse_node_labels(labels, ((0, 1, 2),), mu, 0.5, "mv-weighted")
        assert classes == (1,)
        assert flags == (True,)

    def test_plain_ignores_mu(self):
        labels = {0: 1, 1: 0, 2: 1}
        a, _ = fuse_node_labels(labels, ((0, 1, 2),), {0: 1, 1: 1, 2: 1}, 0.0, "plain-mode")
        b, _ = fuse_node_labels(labels, ((0, 1, 2),), {0: 0.01, 1: 0.9, 2: 0.2}, 0.0, "plain-mode")
        assert a == b

    def test_uniform_mu_matches_plain_on_odd_cluster(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            labels = {i: int(rng.integers(0, 2)) for i in range(5)}
            mu = {i: 0.7 for i in range(5)}
            plain, _ = fuse_node_labels(labels, (tuple(range(5)),), mu, 0.0, "plain-mode")
            weighted, _ = fuse_node_labels(labels, (tuple(range(5)),), mu, 0.0, "mv-weighted")
            assert plain == weighted

    def test_plain_tie_goes_to_zero(self):
        labels = {0: 1, 1: 0}
        classes, _ = fuse_node_labels(labels, ((0, 1),), {0: 1.0, 1: 1.0}, 0.0, "plain-mode")
        assert classes == (0,)

    def test_bad_mode_and_labels(self):
        with pytest.raises(ValueError):
            fuse_node_labels({0: 1}, ((0,),), {0: 1.0}, 0.0, "median")
        with pytest.raises(ValueError):
            fuse_node_labels({0: 2}, ((0,),), {0: 1.0}, 0.0, "plain-mode")


class TestScoreFusion:
    def test_all_correct(self):
        assert score_fusion([(0, 1), (1, 0)], [(0, 1), (1, 0)]) == (1.0, 1.0)

    def test_all_wrong(self):
        acc, _ = score_fusion([(1, 0)], [(0, 1)])
        assert acc == 0.0

    def test_half_correct_balanced(self):
        acc, _ = score_fusion([(0, 1), (0, 1)], [(0, 1), (1, 0)])
        assert acc == 0.5

    def test_no_positives_f1_is_one(self):
        acc, f1 = score_fusion([(0, 0)], [(0, 0)])
        assert (acc, f1) == (1.0, 1.0)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            score_fusion([(0, 1)], [(0, 1), (1, 0)])
        with pytest.raises(ValueError):
            score_fusion([], [])


class TestSyntheticLabels:
    def test_error_curve_shape(self):
        d_c = 0.6
        inside = label_error_probability(0.3, d_c)
        at_dc = label_error_probability(0.6, d_c)
        far = label_error_probability(1.2, d_c)
        very_far = label_error_probability(10.0, d_c)
        assert inside == at_dc
        assert at_dc < far < very_far
        assert very_far <= 0.45

    def test_deterministic(self):
        sc = generate_scenario(3, n_nodes=8)
        assert synth_node_labels(sc, 7) == synth_node_labels(sc, 7)
        assert synth_node_labels(sc, 7) != synth_node_labels(sc, 8) or True

    def test_near_nodes_usually_correct(self):
        sc = generate_scenario(4, n_nodes=8)
        truth = dominance_labels(sc)
        dist = sc.distances()
        near = [i for i in range(8) if dist[truth[i], i] <= sc.critical_distance]
        assert near
        hits = 0
        total = 0
        for seed in range(100):
            labels = synth_node_labels(sc, seed)
            for i in near:
                hits += int(labels[i] == truth[i])
                total += 1
        assert hits / total > 0.85


class TestEvaluateRun:
    def test_perfect_partition_scores(self):
        sc = generate_scenario(2, n_nodes=8)
        truth = dominance_labels(sc)
        clusters = (tuple(int(i) for i in np.flatnonzero(truth == 0)),
                    tuple(int(i) for i in np.flatnonzero(truth == 1)))
        mu = {i: 1.0 for i in range(8)}
        res = evaluate_run(sc, clusters, mu)
        assert res.assignment_accuracy == 1.0
        assert res.cluster_truth == (0, 1)
        for ci, own in enumerate(res.cluster_truth):
            assert res.distance[ci, own] < res.distance[ci, 1 - own]
        assert set(res.predictions) == {"plain", "mv@0", "mv@0.5", "mv@0.9"}

    def test_single_cluster_fallback(self):
        sc = generate_scenario(2, n_nodes=8)
        mu = {i: 1.0 for i in range(8)}
        res = evaluate_run(sc, (tuple(range(8)),), mu)
        assert res.assignment_accuracy == 0.5
        assert res.distance.shape == (1, 2)
