import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_l0_residual, coherence, equiangular_4x6, lasso_cd, lasso_objective, spike_hadamard
from sparsedl.core import DataError, DegenerateDictionaryError, Dictionary
from sparsedl.sparse_coding import batch_omp, exhaustive_l0, ista_l1, l1_objective, omp, omp_dense


def unit_columns(A):
    return A / np.linalg.norm(A, axis=0)


class TestOmp:
    def test_atom_identity(self):
        D = unit_columns(np.random.default_rng(1).standard_normal((5, 7)))
        r = omp(D[:, 3], D, 1)
        assert r.as_dict().keys() == {3}
        assert r.coef[3] == pytest.approx(1.0, abs=1e-12)
        assert r.residual_norm == pytest.approx(0.0, abs=1e-12)

    def test_zero_signal(self):
        D = unit_columns(np.random.default_rng(2).standard_normal((5, 7)))
        r = omp(np.zeros(5), D, 3)
        assert r.support.size == 0 and r.residual_norm == 0.0 and r.n_iter == 0

    def test_two_atom_example(self):
        # six atoms in four dimensions cannot have coherence below 1/3; an
        # equiangular frame attains exactly 1/3
        D = equiangular_4x6(seed=3)
        assert coherence(D) <= 1 / 3 + 1e-12
        y = 2.0 * D[:, 1] - 1.5 * D[:, 4]
        r = omp(y, D, 2)
        assert list(r.support) == [1, 4]
        assert np.allclose(r.coef[[1, 4]], [2.0, -1.5], atol=1e-10)
        exact = [S for S in itertools.combinations(range(6), 2) if np.linalg.norm(y - D[:, S] @ np.linalg.lstsq(D[:, S], y, rcond=None)[0]) < 1e-10]
        assert exact == [(1, 4)]
        assert list(exhaustive_l0(y, D, 2).support) == [1, 4]

    def test_least_squares_on_support(self):
        rng = np.random.default_rng(4)
        D = unit_columns(rng.standard_normal((8, 12)))
        y = rng.standard_normal(8)
        r = omp(y, D, 3)
        S = r.support
        ls, *_ = np.linalg.lstsq(D[:, S], y, rcond=None)
        assert np.allclose(r.coef[S], ls, atol=1e-10)
        assert r.residual_norm == pytest.approx(np.linalg.norm(y - D @ r.coef), abs=1e-10)

    def test_greedy_selection_rule(self):
        rng = np.random.default_rng(5)
        D = unit_columns(rng.standard_normal((6, 10)))
        y = rng.standard_normal(6)
        chosen = []
        res = y.copy()
        for t in range(1, 4):
            corr = np.abs(D.T @ res)
            corr[chosen] = -1
            chosen.append(int(np.argmax(corr)))
            c, *_ = np.linalg.lstsq(D[:, chosen], y, rcond=None)
            res = y - D[:, chosen] @ c
            assert sorted(omp(y, D, t).support) == sorted(chosen)

    def test_early_stop_on_tolerance(self):
        D = np.eye(4)
        y = np.array([3.0, 0.5, 0.0, 0.0])
        r = omp(y, D, 3, eps=1.0)
        assert r.as_dict() == {0: 3.0}

    def test_tie_goes_to_lowest_index(self):
        D = np.eye(3)
        r = omp(np.array([1.0, 1.0, 1.0]), D, 1)
        assert list(r.support) == [0]

    def test_budget_bounds(self):
        D = np.eye(3)
        with pytest.raises(DataError):
            omp(np.ones(3), D, 0)
        with pytest.raises(DataError):
            omp(np.ones(3), D, 4)

    def test_degenerate_dictionary(self):
        # third atom lies within 1e-9 of the span of the first two
        v = unit_columns(np.array([[1.0], [1.0], [1e-9]]))[:, 0]
        D = np.column_stack([np.eye(3)[:, 0], np.eye(3)[:, 1], v])
        Y = np.column_stack([np.array([1.0, 0.0, 0.0]), np.array([1.0, 2.0, 1.0])])
        with pytest.raises(DegenerateDictionaryError) as info:
            omp_dense(Y, D, 3)
        assert info.value.column == 1


class TestBatchOmp:
    def test_atom_columns(self):
        D = unit_columns(np.random.default_rng(6).standard_normal((6, 8)))
        codes = batch_omp(D[:, [1, 2]], D, 2)
        dense = codes.to_dense()
        assert np.allclose(dense[:, 0], np.eye(8)[1]) and np.allclose(dense[:, 1], np.eye(8)[2])

    def test_empty(self):
        codes = batch_omp(np.zeros((4, 0)), np.eye(4), 2)
        assert codes.n_cols == 0

    def test_matches_single_column(self):
        rng = np.random.default_rng(7)
        D = unit_columns(rng.standard_normal((8, 16)))
        Y = rng.standard_normal((8, 32))
        dense = batch_omp(Y, D, 3).to_dense()
        for j in range(32):
            single = omp(Y[:, j], D, 3).coef
            assert np.array_equal(np.flatnonzero(dense[:, j]), np.flatnonzero(single))
            assert np.allclose(dense[:, j], single, rtol=0, atol=1e-12)

    def test_worker_count_invariance(self):
        rng = np.random.default_rng(8)
        D = Dictionary.from_matrix(rng.standard_normal((8, 16)))
        Y = rng.standard_normal((8, 1500))
        one = batch_omp(Y, D, 3, workers=1)
        many = batch_omp(Y, D, 3, workers=4)
        assert one == many
        assert np.array_equal(one.values, many.values)

    def test_budget_never_exceeded(self):
        rng = np.random.default_rng(9)
        D = unit_columns(rng.standard_normal((10, 20)))
        codes = batch_omp(rng.standard_normal((10, 200)), D, 4)
        assert codes.nnz_per_column().max() <= 4

    def test_order_independence(self):
        rng = np.random.default_rng(10)
        D = unit_columns(rng.standard_normal((6, 9)))
        Y = rng.standard_normal((6, 40))
        perm = rng.permutation(40)
        a = batch_omp(Y, D, 2).to_dense()
        b = batch_omp(Y[:, perm], D, 2).to_dense()
        assert np.array_equal(a[:, perm], b)


def test_exact_recovery_low_coherence():
    D = spike_hadamard(16, seed=0)
    T = 2
    assert coherence(D) < 1 / (2 * T - 1)
    rng = np.random.default_rng(0)
    for _ in range(100):
        S = np.sort(rng.choice(D.shape[1], T, replace=False))
        x = np.zeros(D.shape[1])
        x[S] = rng.choice([-1, 1], T) * rng.uniform(0.5, 2.0, T)
        r = omp(D @ x, D, T)
        assert list(r.support) == list(S)


class TestIsta:
    def test_scalar_closed_form(self):
        r = ista_l1(np.array([3.0]), np.array([[1.0]]), 2.0)
        assert r.coef[0] == pytest.approx(2.0, abs=1e-10)

    def test_orthonormal_lambda_zero(self):
        Q, _ = np.linalg.qr(np.random.default_rng(11).standard_normal((5, 5)))
        y = np.random.default_rng(12).standard_normal(5)
        r = ista_l1(y, Q, 0.0)
        assert np.allclose(r.coef, Q.T @ y, atol=1e-8)

    def test_matches_coordinate_descent(self):
        rng = np.random.default_rng(13)
        D = unit_columns(rng.standard_normal((3, 5)))
        y = rng.standard_normal(3)
        r = ista_l1(y, D, 0.1, max_iter=200000, tol=1e-15)
        x_cd = lasso_cd(y, D, 0.1)
        assert abs(l1_objective(y, D, r.coef, 0.1) - lasso_objective(y, D, x_cd, 0.1)) < 1e-6

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            D = unit_columns(rng.standard_normal((6, 10)))
            y = rng.standard_normal(6)
            h = ista_l1(y, D, rng.uniform(0.01, 1.0), max_iter=3000).history
            assert np.all(np.diff(h) <= 1e-12)

    def test_not_converged_flag(self):
        rng = np.random.default_rng(15)
        D = unit_columns(rng.standard_normal((6, 10)))
        r = ista_l1(rng.standard_normal(6), D, 0.01, max_iter=3, tol=1e-15)
        assert not r.converged
        assert r.n_iter == 3

    def test_warm_start(self):
        rng = np.random.default_rng(16)
        D = unit_columns(rng.standard_normal((6, 10)))
        y = rng.standard_normal(6)
        cold = ista_l1(y, D, 0.2)
        warm = ista_l1(y, D, 0.2, x0=cold.coef)
        assert warm.n_iter <= 2
        assert np.allclose(warm.coef, cold.coef, atol=1e-8)

    def test_negative_lambda(self):
        with pytest.raises(DataError):
            ista_l1(np.ones(2), np.eye(2), -1.0)


class TestExhaustive:
    def test_atom_identity(self):
        D = unit_columns(np.random.default_rng(17).standard_normal((4, 6)))
        r = exhaustive_l0(D[:, 2], D, 1)
        assert list(r.support) == [2] and r.residual_norm < 1e-12

    def test_full_budget_is_least_squares(self):
        rng = np.random.default_rng(18)
        D = unit_columns(rng.standard_normal((6, 4)))
        y = rng.standard_normal(6)
        ls, *_ = np.linalg.lstsq(D, y, rcond=None)
        assert exhaustive_l0(y, D, 4).residual_norm == pytest.approx(np.linalg.norm(y - D @ ls), abs=1e-10)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            D = unit_columns(rng.standard_normal((5, 7)))
            y = rng.standard_normal(5)
            assert exhaustive_l0(y, D, 2).residual_norm == pytest.approx(brute_l0_residual(y, D, 2), abs=1e-10)

    def test_guard(self):
        with pytest.raises(DataError, match="guard"):
            exhaustive_l0(np.ones(40), np.eye(40), 20)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 6), st.integers(2, 8), st.integers(1, 2))
def test_oracle_dominates_omp(seed, d, K, T):
    T = min(T, d, K)
    rng = np.random.default_rng(seed)
    D = unit_columns(rng.standard_normal((d, K)))
    y = rng.standard_normal(d)
    assert exhaustive_l0(y, D, T).residual_norm <= omp(y, D, T).residual_norm + 1e-10
