import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specnl.affinity import (
    AffinityMatrix,
    IndefiniteAffinityError,
    IsolatedNodeError,
    compute_affinity,
    criss_cross_mask,
    degree_matrix,
    normalize_masked_rw,
    normalize_rw,
    normalize_sym,
)
from specnl.tensor import softmax_rows, sym_eig


def raw(m):
    return AffinityMatrix(m=np.asarray(m, dtype=np.float64))


class TestComputeAffinity:
    def test_dot_orthonormal_rows(self):
        aff = compute_affinity(np.eye(2), np.eye(2), "dot")
        assert np.array_equal(aff.m, np.eye(2))

    def test_gaussian_of_zero_features(self):
        z = np.zeros((3, 2))
        aff = compute_affinity(z, z, "gaussian")
        assert np.array_equal(aff.m, np.ones((3, 3)))

    def test_dot_pairwise_by_hand(self):
        phi = np.array([[1.0, 0.0], [0.0, 2.0]])
        aff = compute_affinity(phi, phi, "dot")
        assert np.array_equal(aff.m, np.array([[1.0, 0.0], [0.0, 4.0]]))

    def test_unknown_kernel(self):
        with pytest.raises(ValueError, match="kernel"):
            compute_affinity(np.eye(2), np.eye(2), "rbf")

    def test_eps_floor_is_explicit(self):
        z = np.zeros((2, 1))
        aff = compute_affinity(z, z, "dot", eps=1e-12)
        assert np.all(aff.m == 1e-12)


class TestDegreeAndRandomWalk:
    def test_exchange_degrees(self):
        d = degree_matrix(raw([[0.0, 1.0], [1.0, 0.0]]))
        assert np.array_equal(d, np.eye(2))

    def test_uniform_degrees(self):
        d = degree_matrix(raw(np.ones((3, 3))))
        assert np.array_equal(d, 3.0 * np.eye(3))

    def test_row_sums(self):
        d = degree_matrix(raw([[1.0, 1.0], [3.0, 1.0]]))
        assert np.array_equal(d, np.diag([2.0, 4.0]))

    def test_zero_row_is_isolated(self):
        with pytest.raises(IsolatedNodeError, match="row 1"):
            degree_matrix(raw([[1.0, 1.0], [0.0, 0.0]]))

    def test_rw_rows(self):
        a = normalize_rw(raw([[1.0, 1.0], [3.0, 1.0]]))
        assert np.allclose(a.m, [[0.5, 0.5], [0.75, 0.25]])
        assert a.norm == "random-walk"

    def test_rw_uniform(self):
        a = normalize_rw(raw(np.ones((4, 4))))
        assert np.allclose(a.m, 0.25)

    def test_rw_idempotent(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = rng.random((5, 5)) + 0.01
            once = normalize_rw(raw(m))
            twice = normalize_rw(once)
            assert np.abs(once.m - twice.m).max() < 1e-12

    def test_rw_nonpositive_rowsum(self):
        with pytest.raises(IsolatedNodeError):
            normalize_rw(raw([[1.0, -2.0], [1.0, 1.0]]))

    def test_embedded_gaussian_rw_equals_attention_softmax(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            phi = rng.standard_normal((6, 3))
            psi = rng.standard_normal((6, 3))
            a = normalize_rw(compute_affinity(phi, psi, "embedded-gaussian"))
            assert np.abs(a.m - softmax_rows(phi @ psi.T)).max() < 1e-12


class TestSymmetricNormalization:
    def test_uniform(self):
        a = normalize_sym(raw(np.ones((2, 2))))
        assert np.allclose(a.m, 0.5)

    def test_hand_case(self):
        a = normalize_sym(raw([[1.0, 3.0], [1.0, 1.0]]))
        # Mhat = [[1,2],[2,1]], degrees (3,3)
        assert np.allclose(a.m, [[1 / 3, 2 / 3], [2 / 3, 1 / 3]], atol=1e-15)

    def test_hand_case_spectrum(self):
        a = normalize_sym(raw([[1.0, 3.0], [1.0, 1.0]]))
        lam = sym_eig(a.m).eigenvalues
        assert np.allclose(lam, [-1 / 3, 1.0], atol=1e-12)

    def test_negative_entry_rejected(self):
        with pytest.raises(IndefiniteAffinityError, match="negative"):
            normalize_sym(raw([[1.0, -0.5], [-0.5, 1.0]]))

    def test_allow_negative_override(self):
        a = normalize_sym(raw([[1.0, -0.5], [-0.5, 1.0]]), allow_negative=True)
        assert a.norm == "symmetric"

    def test_spectrum_and_symmetry_random(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(2, 10))
            m = rng.random((n, n))
            a = normalize_sym(raw(m))
            assert np.abs(a.m - a.m.T).max() < 1e-12
            assert a.m.min() >= 0.0
            lam = sym_eig(a.m).eigenvalues
            assert lam.min() >= -1.0 - 1e-10
            assert lam.max() <= 1.0 + 1e-10

    @given(st.integers(2, 6), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_spectrum_property(self, n, seed):
        rng = np.random.default_rng(seed)
        a = normalize_sym(raw(rng.random((n, n)) + 1e-6))
        lam = sym_eig(a.m).eigenvalues
        assert -1.0 - 1e-10 <= lam.min() and lam.max() <= 1.0 + 1e-10


class TestCrissCross:
    def test_single_row_all_ones(self):
        mask = criss_cross_mask(1, 5)
        assert np.array_equal(mask.c, np.ones((5, 5)))

    def test_2x2_counts(self):
        mask = criss_cross_mask(2, 2)
        assert mask.c.sum() == 12  # each of 4 positions connects to 3
        assert np.array_equal(np.diag(mask.c), np.ones(4))

    def test_symmetric_any_shape(self):
        for h, w in ((2, 3), (3, 3), (4, 2), (1, 1)):
            mask = criss_cross_mask(h, w)
            assert np.array_equal(mask.c, mask.c.T)

    def test_definition(self):
        mask = criss_cross_mask(3, 4)
        for i in range(12):
            for j in range(12):
                share = (i // 4 == j // 4) or (i % 4 == j % 4)
                assert mask.c[i, j] == float(share)

    def test_invalid_extent(self):
        with pytest.raises(ValueError):
            criss_cross_mask(0, 3)

    def test_masked_rows_sum_to_one_over_kept_edges(self):
        rng = np.random.default_rng(3)
        m = rng.random((12, 12)) + 0.1
        mask = criss_cross_mask(3, 4)
        a = normalize_masked_rw(raw(m), mask)
        assert a.norm == "masked-random-walk"
        assert np.abs(a.m.sum(axis=1) - 1.0).max() < 1e-12
        assert np.all(a.m[mask.c == 0.0] == 0.0)
