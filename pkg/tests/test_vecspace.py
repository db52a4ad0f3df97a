"""Cosine similarity and similarity-matrix construction."""

import numpy as np
import pytest

from micfed.vecspace import (
    DegenerateUpdateError,
    SimilarityMatrix,
    as_param_vector,
    cosine_similarity,
    similarity_matrix,
)


class TestAsParamVector:
    def test_accepts_lists(self):
        v = as_param_vector([1, 2, 3])
        assert v.dtype == np.float64 and v.shape == (3,)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            as_param_vector(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            as_param_vector([])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            as_param_vector([1.0, np.nan])
        with pytest.raises(ValueError):
            as_param_vector([np.inf, 0.0])


class TestCosineSimilarity:
    def test_axes(self):
        assert cosine_similarity([1, 0], [2, 0]) == 1.0
        assert cosine_similarity([1, 0], [-3, 0]) == -1.0
        assert cosine_similarity([1, 0], [0, 5]) == 0.0

    def test_self_similarity(self):
        v = np.random.default_rng(0).normal(size=30)
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            u = rng.normal(size=10)
            v = rng.normal(size=10)
            a = cosine_similarity(u, v)
            b = cosine_similarity(3.7 * u, 0.002 * v)
            assert a == pytest.approx(b, abs=1e-12)

    def test_zero_norm_raises(self):
        with pytest.raises(DegenerateUpdateError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])
        with pytest.raises(DegenerateUpdateError):
            cosine_similarity([1.0, 0.0], [0.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


class TestSimilarityMatrix:
    def test_block_structure(self):
        updates = [np.array([1.0, 0.1, 0.0]), np.array([0.9, 0.2, 0.0]),
                   np.array([-1.0, 0.0, 0.1]), np.array([-0.8, -0.1, 0.0])]
        m = similarity_matrix(updates, ids=(1, 2, 3, 4))
        assert m.client_ids == (1, 2, 3, 4)
        within = [m.entries[0, 1], m.entries[2, 3]]
        cross = [m.entries[0, 2], m.entries[0, 3], m.entries[1, 2], m.entries[1, 3]]
        assert min(within) > 0.9
        assert max(cross) < -0.8

    def test_diagonal_exactly_one(self):
        rng = np.random.default_rng(2)
        m = similarity_matrix([rng.normal(size=50) for _ in range(6)])
        assert np.array_equal(np.diag(m.entries), np.ones(6))

    def test_bitwise_symmetric_and_bounded(self):
        rng = np.random.default_rng(3)
        m = similarity_matrix([rng.normal(size=8) * 10.0 ** rng.integers(-6, 6)
                               for _ in range(10)])
        assert np.array_equal(m.entries, m.entries.T)
        assert m.entries.min() >= -1.0 and m.entries.max() <= 1.0

    def test_zero_update_names_client(self):
        updates = [np.ones(4), np.zeros(4), np.ones(4)]
        with pytest.raises(DegenerateUpdateError) as err:
            similarity_matrix(updates, ids=(7, 8, 9))
        assert err.value.client_id == 8

    def test_default_ids(self):
        m = similarity_matrix([np.ones(3), np.ones(3)])
        assert m.client_ids == (0, 1)
        assert m.index_of(1) == 1

    def test_length_mismatch_names_client(self):
        with pytest.raises(ValueError, match="client 5"):
            similarity_matrix([np.ones(3), np.ones(4)], ids=(4, 5))

    def test_validation(self):
        with pytest.raises(ValueError):
            SimilarityMatrix(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            SimilarityMatrix(np.asarray([[1.0, 0.5], [0.4, 1.0]]))
        with pytest.raises(ValueError):
            SimilarityMatrix(np.asarray([[1.0, 1.5], [1.5, 1.0]]))
        with pytest.raises(ValueError):
            SimilarityMatrix(np.eye(2), client_ids=(0, 0))
        with pytest.raises(ValueError):
            SimilarityMatrix(np.eye(2), client_ids=(0, 1, 2))
        m = SimilarityMatrix(np.eye(3))
        assert m.size == 3
