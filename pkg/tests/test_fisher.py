import numpy as np
import pytest

from sparsedl.core import DataError
from sparsedl.fisher import fddl_code, fddl_cost, fddl_smooth_grad, fisher_g, scatter
from sparsedl.sparse_coding import ista_l1, l1_objective

ONE_D = np.array([[1.0, 3.0, 5.0, 7.0]])
ONE_D_LABELS = [0, 0, 1, 1]


def unit_columns(A):
    return A / np.linalg.norm(A, axis=0)


def fisher_problem(seed=0, d=6, K=5, n=(4, 3, 5)):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(n)), n)
    X_all = rng.standard_normal((K, labels.size))
    D = unit_columns(rng.standard_normal((d, K)))
    Y_i = rng.standard_normal((d, n[1]))
    return rng, D, X_all, labels, Y_i


class TestScatter:
    def test_one_d_hand_example(self):
        sp = scatter(ONE_D, ONE_D_LABELS)
        assert np.trace(sp.Sw) == 4.0
        assert np.trace(sp.SB) == 8.0
        assert np.allclose(sp.class_means[:, 0], [2.0, 6.0]) and sp.mean[0] == 4.0

    def test_identical_samples_zero_within(self):
        X = np.repeat(np.array([[1.0, -2.0], [0.5, 3.0]]), 3, axis=1)
        sp = scatter(X, [0, 0, 0, 1, 1, 1])
        assert not sp.Sw.any()

    def test_single_class_zero_between(self):
        X = np.random.default_rng(1).standard_normal((3, 5))
        assert np.allclose(scatter(X, np.zeros(5, int)).SB, 0.0, atol=1e-15)

    def test_symmetric_psd(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            X = rng.standard_normal((6, 30))
            sp = scatter(X, np.arange(30) % 4)
            for S in (sp.Sw, sp.SB):
                assert np.allclose(S, S.T, atol=1e-12)
                assert np.linalg.eigvalsh(S).min() >= -1e-10

    def test_translation_invariances(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((4, 12))
        labels = np.arange(12) % 3
        base = scatter(X, labels)
        shifted = X.copy()
        shifted[:, labels == 1] += rng.standard_normal(4)[:, None]
        assert np.trace(scatter(shifted, labels).Sw) == pytest.approx(np.trace(base.Sw), rel=1e-12)
        moved = X + rng.standard_normal(4)[:, None]
        assert np.trace(scatter(moved, labels).SB) == pytest.approx(np.trace(base.SB), rel=1e-12)

    def test_empty_class_named(self):
        with pytest.raises(DataError, match="class 1"):
            scatter(np.ones((1, 3)), [0, 0, 2])


class TestFisherG:
    def test_one_d_example(self):
        assert fisher_g(ONE_D, ONE_D_LABELS, 0.0) == 4.0

    def test_frobenius_only(self):
        X = np.full((1, 9), 1.0)
        assert fisher_g(X, np.zeros(9, int), 1.0) == pytest.approx(9.0, abs=1e-12)

    def test_homogeneity(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((5, 20))
        labels = np.arange(20) % 4
        g = fisher_g(X, labels, 0.0)
        for c in (-2.0, 0.5, 3.0):
            assert fisher_g(c * X, labels, 0.0) == pytest.approx(c * c * g, rel=1e-12)

    def test_sign_switch(self):
        assert fisher_g(ONE_D, ONE_D_LABELS, 0.0, fisher_sign="discriminative") == -4.0

    def test_negative_eta(self):
        with pytest.raises(DataError):
            fisher_g(ONE_D, ONE_D_LABELS, -1.0)


class TestFddlCost:
    def test_weights_off_is_representation_error(self):
        _, D, X_all, labels, Y_i = fisher_problem()
        X_i = X_all[:, labels == 1]
        assert fddl_cost(Y_i, D, X_i, X_all, labels, 1, 0.0, 0.0, 0.3) == pytest.approx(np.sum((Y_i - D @ X_i) ** 2), abs=1e-12)

    def test_zero_case(self):
        _, D, X_all, labels, Y_i = fisher_problem()
        zeros = np.zeros((D.shape[1], 3))
        X_all[:, labels == 1] = 0
        assert fddl_cost(np.zeros_like(Y_i), D, zeros, X_all, labels, 1, 1.0, 0.0, 0.3) == 0.0

    def test_term_by_term(self):
        _, D, X_all, labels, Y_i = fisher_problem(seed=5)
        X_i = np.random.default_rng(6).standard_normal((D.shape[1], 3))
        c1, c2, eta = 0.4, 0.7, 0.2
        X = X_all.copy()
        X[:, labels == 1] = X_i
        m = X.mean(axis=1)
        means = [X[:, labels == j].mean(axis=1) for j in range(3)]
        tr_sb = sum(float((mj - m) @ (mj - m)) for mj in means)
        tr_sw = float(np.sum((X_i - means[1][:, None]) ** 2))
        g = tr_sb - tr_sw + eta * float(np.sum(X * X))
        want = float(np.sum((Y_i - D @ X_i) ** 2)) + c1 * float(np.abs(X_i).sum()) + c2 * g
        assert fddl_cost(Y_i, D, X_i, X_all, labels, 1, c1, c2, eta) == pytest.approx(want, rel=1e-12)

    def test_shape_mismatch(self):
        _, D, X_all, labels, Y_i = fisher_problem()
        with pytest.raises(DataError):
            fddl_cost(Y_i, D, np.zeros((D.shape[1], 2)), X_all, labels, 1, 0.1, 0.1, 0.1)


class TestFddlCode:
    def test_c2_zero_matches_ista(self):
        _, D, X_all, labels, Y_i = fisher_problem(seed=7)
        c1 = 0.3
        X0 = np.zeros((D.shape[1], Y_i.shape[1]))
        X, _, _ = fddl_code(Y_i, D, X0, X_all, labels, 1, c1, 0.0, 0.1, max_iter=20000, tol=1e-14)
        ours = fddl_cost(Y_i, D, X, X_all, labels, 1, c1, 0.0, 0.1)
        ref = sum(l1_objective(Y_i[:, j], D, ista_l1(Y_i[:, j], D, c1, max_iter=20000).coef, c1) for j in range(Y_i.shape[1]))
        assert abs(ours - ref) < 1e-6

    @pytest.mark.parametrize("sign", ["printed", "discriminative"])
    def test_gradient_finite_differences(self, sign):
        rng, D, X_all, labels, Y_i = fisher_problem(seed=8)
        X_i = rng.standard_normal((D.shape[1], 3))
        c2, eta = 0.6, 0.25
        G = fddl_smooth_grad(Y_i, D, X_i, X_all, labels, 1, c2, eta, sign)
        h = 1e-6
        worst = 0.0
        for idx in np.ndindex(X_i.shape):
            P, M = X_i.copy(), X_i.copy()
            P[idx] += h
            M[idx] -= h
            num = (fddl_cost(Y_i, D, P, X_all, labels, 1, 0.0, c2, eta, sign) - fddl_cost(Y_i, D, M, X_all, labels, 1, 0.0, c2, eta, sign)) / (2 * h)
            worst = max(worst, abs(num - G[idx]) / max(abs(num), abs(G[idx]), 1e-8))
        assert worst < 1e-5

    def test_best_so_far_returned(self):
        rng, D, X_all, labels, Y_i = fisher_problem(seed=9)
        X0 = rng.standard_normal((D.shape[1], 3))
        X, hist, _ = fddl_code(Y_i, D, X0, X_all, labels, 1, 0.2, 0.5, 0.3, max_iter=300)
        best = np.minimum.accumulate(hist)
        assert np.all(np.diff(best) <= 0)
        assert fddl_cost(Y_i, D, X, X_all, labels, 1, 0.2, 0.5, 0.3) == pytest.approx(hist.min(), abs=1e-12)

    def test_non_convergence_flag(self):
        rng, D, X_all, labels, Y_i = fisher_problem(seed=10)
        _, hist, converged = fddl_code(Y_i, D, rng.standard_normal((D.shape[1], 3)), X_all, labels, 1, 0.2, 0.5, 0.3, max_iter=2, tol=1e-15)
        assert not converged and hist.size == 3
