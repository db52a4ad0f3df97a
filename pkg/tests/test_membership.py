"""Membership-value computation against hand-worked fixtures."""

import numpy as np
import pytest

from micfed.membership import (
    MembershipReport,
    csv_rows,
    fused_scores,
    mean_similarities,
    membership_values,
    threshold_mvs,
)
from micfed.vecspace import SimilarityMatrix, similarity_matrix


def fixture_matrix() -> SimilarityMatrix:
    ids = (1, 2, 3, 4)
    a = np.eye(4)
    pairs = {(1, 2): 0.9, (1, 3): 0.5, (2, 3): 0.6,
             (1, 4): 0.1, (2, 4): 0.2, (3, 4): 0.8}
    for (i, j), v in pairs.items():
        a[ids.index(i), ids.index(j)] = v
        a[ids.index(j), ids.index(i)] = v
    return SimilarityMatrix(a, ids)


class TestMeanSimilarities:
    def test_hand_fixture(self):
        q, r = mean_similarities(fixture_matrix(), (1, 2, 3), (4,))
        np.testing.assert_allclose(q[:3], [0.7, 0.75, 0.55], atol=1e-12)
        np.testing.assert_allclose(r[:3], [0.1, 0.2, 0.8], atol=1e-12)
        assert np.isnan(q[3])
        np.testing.assert_allclose(r[3], (0.1 + 0.2 + 0.8) / 3, atol=1e-12)

    def test_two_node_cluster_q_is_pair_similarity(self):
        m = fixture_matrix()
        q, _ = mean_similarities(m, (1, 2), (3, 4))
        assert q[0] == m.entries[0, 1]
        assert q[1] == m.entries[0, 1]

    def test_identical_updates_all_ones(self):
        updates = [np.ones(10)] * 4
        m = similarity_matrix(updates)
        q, r = mean_similarities(m, (0, 1), (2, 3))
        np.testing.assert_allclose(q, np.ones(4), atol=1e-12)
        np.testing.assert_allclose(r, np.ones(4), atol=1e-12)

    def test_partition_validation(self):
        m = fixture_matrix()
        with pytest.raises(ValueError):
            mean_similarities(m, (1, 2), (2, 3, 4))
        with pytest.raises(ValueError):
            mean_similarities(m, (1, 2), (3,))
        with pytest.raises(ValueError):
            mean_similarities(m, (), (1, 2, 3, 4))


class TestFusedScores:
    def test_hand_fixture(self):
        p = fused_scores(np.array([0.7, 0.75, 0.55]), np.array([0.1, 0.2, 0.8]), 0.5)
        np.testing.assert_allclose(p, [0.375, 4.0 / 7.0, 0.5], atol=1e-12)

    def test_lambda_extremes(self):
        q = np.array([0.7, 0.75, 0.55])
        r = np.array([0.1, 0.2, 0.8])
        np.testing.assert_allclose(fused_scores(q, r, 1.0), [0.75, 1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(fused_scores(q, r, 0.0), [0.0, 1.0 / 7.0, 1.0], atol=1e-12)

    def test_constant_vectors_become_half(self):
        p = fused_scores(np.array([0.4, 0.4]), np.array([0.1, 0.9]), 0.5)
        np.testing.assert_allclose(p, [0.25, 0.75], atol=1e-12)

    def test_bad_lambda(self):
        with pytest.raises(ValueError):
            fused_scores(np.array([0.1]), np.array([0.2]), 1.5)


class TestMembershipValues:
    def test_hand_fixture(self):
        report = membership_values(fixture_matrix(), (1, 2, 3), (4,), lam=0.5)
        assert report.references == (1, 4)
        assert report.mu[1] == pytest.approx(1.0, abs=1e-12)
        assert report.mu[2] == pytest.approx(0.8, abs=1e-12)
        assert report.mu[3] == pytest.approx(0.0, abs=1e-12)
        assert report.mu[4] == 1.0
        assert report.zeroed == frozenset()
        assert report.threshold == 0.0

    def test_two_node_cluster(self):
        report = membership_values(fixture_matrix(), (1, 2), (3, 4))
        values = sorted((report.mu[1], report.mu[2]))
        assert values == [0.0, 1.0]

    def test_multi_node_minmax_span(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(4, 9))
            vecs = [rng.standard_normal(12) for _ in range(n)]
            m = similarity_matrix(vecs)
            cut = int(rng.integers(2, n - 1))
            report = membership_values(m, tuple(range(cut)), tuple(range(cut, n)))
            for cluster in report.clusters:
                if len(cluster) < 2:
                    continue
                values = [report.mu[i] for i in cluster]
                assert max(values) == pytest.approx(1.0, abs=1e-12)
                assert min(values) == pytest.approx(0.0, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            n = int(rng.integers(3, 8))
            vecs = [rng.standard_normal(15) for _ in range(n)]
            alpha = float(rng.uniform(0.01, 50.0))
            cut = int(rng.integers(1, n))
            c1 = tuple(range(cut))
            c2 = tuple(range(cut, n))
            a = membership_values(similarity_matrix(vecs), c1, c2)
            b = membership_values(similarity_matrix([alpha * v for v in vecs]), c1, c2)
            assert a.references == b.references
            for i in a.mu:
                assert a.mu[i] == pytest.approx(b.mu[i], abs=1e-12)


class TestThreshold:
    def report(self) -> MembershipReport:
        return membership_values(fixture_matrix(), (1, 2, 3), (4,))

    def test_hand_fixture(self):
        out = threshold_mvs(self.report(), 0.9)
        assert out.mu == {1: 1.0, 2: 0.0, 3: 0.0, 4: 1.0}
        assert out.zeroed == frozenset({2, 3})
        assert out.threshold == 0.9

    def test_zero_threshold_only_exact_zeros(self):
        out = threshold_mvs(self.report(), 0.0)
        assert out.zeroed == frozenset({3})
        assert out.mu[2] == pytest.approx(0.8, abs=1e-12)

    def test_full_threshold(self):
        out = threshold_mvs(self.report(), 1.0)
        assert set(out.mu.values()) == {0.0}
        assert out.zeroed == frozenset({1, 2, 3, 4})

    def test_monotone_zeroed_sets(self):
        base = self.report()
        prev = frozenset()
        for v in (0.0, 0.3, 0.8, 0.9, 1.0):
            out = threshold_mvs(base, v)
            assert out.zeroed >= prev
            prev = out.zeroed

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            threshold_mvs(self.report(), -0.1)


def test_csv_rows_sorted_by_node():
    report = threshold_mvs(membership_values(fixture_matrix(), (1, 2, 3), (4,)), 0.9)
    rows = csv_rows(report)
    assert [r[0] for r in rows] == [1, 2, 3, 4]
    assert rows[0] == (1, 0, 1.0, False)
    assert rows[1] == (2, 0, 0.0, True)
    assert rows[3] == (4, 1, 1.0, False)
