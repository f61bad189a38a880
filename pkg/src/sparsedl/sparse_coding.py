"""Sparse coding against a fixed dictionary.

* :func:`omp` / :func:`batch_omp` -- greedy l0 pursuit.  The batch version
  runs every column of a chunk in lock-step with numpy, keeping a
  per-column Cholesky factor of the selected Gram submatrix that grows by
  one row per iteration.
* :func:`ista_l1` -- iterative soft thresholding for the l1-penalized
  least-squares problem.
* :func:`exhaustive_l0` -- brute force over supports, used as a test oracle.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DataError, DegenerateDictionaryError, SparseCodes

# Columns are processed in fixed-size chunks; chunk boundaries never depend on
# the worker count, which keeps results bit-identical across worker counts.
CHUNK_SIZE = 512
TIE_TOL = 1e-12
# a new atom whose Cholesky pivot falls below this (relative to its own norm)
# makes the selected Gram submatrix numerically singular (condition > ~1e12)
PIVOT_TOL = 1e-12
EXHAUSTIVE_GUARD = 10**6


@dataclass
class PursuitResult:
    """Coefficient vector for one signal plus solver diagnostics."""

    coef: np.ndarray
    residual_norm: float
    n_iter: int
    converged: bool = True
    history: Optional[np.ndarray] = None

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coef)

    def as_dict(self) -> dict:
        return {int(k): float(self.coef[k]) for k in self.support}


def _as_matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise DataError(f"dictionary must be 2-D, got shape {D.shape}")
    return D


def _check_budget(T: int, D: np.ndarray):
    if not 1 <= T <= min(D.shape):
        raise DataError(f"sparsity budget T={T} outside [1, min(d, K)={min(D.shape)}]")


def _omp_chunk(Y, D, G, T, eps, offset):
    """Lock-step OMP over the columns of ``Y``.

    Returns dense codes, iteration counts and recomputed residual norms.
    """
    K = D.shape[1]
    n = Y.shape[1]
    alpha0 = D.T @ Y
    ynorm2 = np.einsum("ij,ij->j", Y, Y)
    ynorm = np.sqrt(ynorm2)
    X = np.zeros((K, n))
    n_iter = np.zeros(n, dtype=np.int64)
    sel = np.zeros((n, T), dtype=np.int64)
    L = np.zeros((n, T, T))
    coef = np.zeros((n, T))
    alpha = alpha0.copy()
    active = ynorm > eps
    diagG = np.diag(G)

    for t in range(T):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        a = np.abs(alpha[:, idx])
        if t:
            a[sel[idx, :t].T, np.arange(idx.size)] = -1.0
        amax = a.max(axis=0)
        # residual orthogonal to every atom: nothing left to select
        stalled = amax <= 1e-12 * ynorm[idx]
        if stalled.any():
            active[idx[stalled]] = False
            keep = ~stalled
            idx, a, amax = idx[keep], a[:, keep], amax[keep]
            if idx.size == 0:
                break
        # lowest atom index among near-ties
        k = np.argmax(a >= (amax - TIE_TOL), axis=0)
        if t == 0:
            piv2 = diagG[k]
        else:
            g = G[sel[idx, :t], k[:, None]]  # (m, t)
            w = np.linalg.solve(L[idx, :t, :t], g[:, :, None])[:, :, 0]
            L[idx, t, :t] = w
            piv2 = diagG[k] - np.einsum("ij,ij->i", w, w)
        bad = piv2 <= PIVOT_TOL * diagG[k]
        if bad.any():
            j = int(idx[np.argmax(bad)])
            raise DegenerateDictionaryError(
                f"atom {int(k[np.argmax(bad)])} is numerically dependent on the selected atoms",
                column=offset + j,
            )
        L[idx, t, t] = np.sqrt(piv2)
        sel[idx, t] = k
        s = sel[idx, : t + 1]
        b = alpha0[s, idx[:, None]]  # (m, t+1)
        Lt = L[idx, : t + 1, : t + 1]
        z = np.linalg.solve(Lt, b[:, :, None])
        c = np.linalg.solve(np.transpose(Lt, (0, 2, 1)), z)[:, :, 0]
        coef[idx, : t + 1] = c
        alpha[:, idx] = alpha0[:, idx] - np.einsum("mtk,mt->km", G[s], c)
        n_iter[idx] += 1
        res2 = np.maximum(ynorm2[idx] - np.einsum("ij,ij->i", b, c), 0.0)
        active[idx] = np.sqrt(res2) > eps[idx]

    for t in range(T):
        rows = np.flatnonzero(n_iter > t)
        X[sel[rows, t], rows] = coef[rows, t]
    resid = np.linalg.norm(Y - D @ X, axis=0)
    return X, n_iter, resid


def omp_dense(Y, D, T: int, eps=None, workers: int = 1):
    """Batch OMP returning ``(X, n_iter, residual_norms)`` with dense ``X``.

    ``eps`` is an absolute residual tolerance (scalar or per column); the
    default is ``1e-6 * ||y||`` for each column.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    D = _as_matrix(D)
    if Y.shape[0] != D.shape[0]:
        raise DataError(f"signal length {Y.shape[0]} does not match dictionary rows {D.shape[0]}")
    _check_budget(T, D)
    N = Y.shape[1]
    if eps is None:
        eps = 1e-6 * np.linalg.norm(Y, axis=0)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (N,))
    if np.any(eps < 0):
        raise DataError("eps must be >= 0")
    if N == 0:
        return np.zeros((D.shape[1], 0)), np.zeros(0, np.int64), np.zeros(0)
    G = D.T @ D
    starts = range(0, N, CHUNK_SIZE)

    def run(s):
        e = min(s + CHUNK_SIZE, N)
        return _omp_chunk(Y[:, s:e], D, G, T, eps[s:e], s)

    if workers > 1 and N > CHUNK_SIZE:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    X = np.concatenate([p[0] for p in parts], axis=1)
    n_iter = np.concatenate([p[1] for p in parts])
    resid = np.concatenate([p[2] for p in parts])
    return X, n_iter, resid


def omp(y, D, T: int, eps: Optional[float] = None) -> PursuitResult:
    """Orthogonal matching pursuit for a single signal.

    Parameters
    ----------
    y : array of shape (d,)
    D : dictionary (d, K) with unit-norm atoms
    T : maximum number of selected atoms, ``1 <= T <= min(d, K)``
    eps : stop once the residual norm is ``<= eps``
        (default ``1e-6 * ||y||``)

    Raises
    ------
    DegenerateDictionaryError
        If the selected atoms become numerically dependent.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    X, n_iter, resid = omp_dense(y[:, None], D, T, None if eps is None else float(eps))
    return PursuitResult(X[:, 0], float(resid[0]), int(n_iter[0]))


def batch_omp(Y, D, T: int, eps=None, workers: int = 1) -> SparseCodes:
    """Run :func:`omp` on every column of ``Y``; see :func:`omp_dense`."""
    X, _, _ = omp_dense(Y, D, T, eps, workers)
    if X.shape[1] == 0:
        return SparseCodes.empty(X.shape[0], budget=T)
    return SparseCodes.from_dense(X, budget=T)


def soft_threshold(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def l1_objective(y, D, x, lam) -> float:
    r = y - D @ x
    return float(r @ r + lam * np.abs(x).sum())


def ista_l1(y, D, lam: float, max_iter: int = 10000, tol: float = 1e-12, x0=None) -> PursuitResult:
    """Minimize ``||y - D x||^2 + lam * ||x||_1`` by iterative soft thresholding.

    Uses the fixed step ``1/L`` with ``L = 2 * ||D||_2^2`` (the Lipschitz
    constant of the smooth term's gradient), which makes the objective
    sequence non-increasing.  Stops when the objective changes by less
    than ``tol``; otherwise returns the best iterate with
    ``converged=False``.  ``x0`` warm-starts the iteration.
    """
    if lam < 0:
        raise DataError("lam must be >= 0")
    D = _as_matrix(D)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    K = D.shape[1]
    x = np.zeros(K) if x0 is None else np.array(x0, dtype=np.float64)
    L = 2.0 * np.linalg.norm(D, 2) ** 2
    if L == 0:
        return PursuitResult(np.zeros(K), float(np.linalg.norm(y)), 0, True, np.array([float(y @ y)]))
    Dty = D.T @ y
    G = D.T @ D
    step = 1.0 / L
    thresh = lam * step
    f = l1_objective(y, D, x, lam)
    history = [f]
    best_x, best_f = x, f
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = 2.0 * (G @ x - Dty)
        x = soft_threshold(x - step * grad, thresh)
        f_new = l1_objective(y, D, x, lam)
        history.append(f_new)
        if f_new < best_f:
            best_x, best_f = x, f_new
        if abs(f - f_new) < tol:
            converged = True
            break
        f = f_new
    resid = float(np.linalg.norm(y - D @ best_x))
    return PursuitResult(best_x, resid, it, converged, np.asarray(history))


def exhaustive_l0(y, D, T: int) -> PursuitResult:
    """Globally optimal support of size ``<= T`` by enumeration.

    Among (numerically) tied residuals the smallest support wins, then the
    lexicographically smallest one.  Refuses when ``C(K, T)`` exceeds
    ``EXHAUSTIVE_GUARD``.
    """
    D = _as_matrix(D)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d, K = D.shape
    if not 0 <= T <= K:
        raise DataError(f"T={T} outside [0, K={K}]")
    if math.comb(K, T) > EXHAUSTIVE_GUARD:
        raise DataError(f"C({K}, {T}) = {math.comb(K, T)} exceeds the enumeration guard {EXHAUSTIVE_GUARD}")
    tie = 1e-12 * max(1.0, float(np.linalg.norm(y)))
    best_coef = np.zeros(K)
    best_res = float(np.linalg.norm(y))
    count = 1
    for size in range(1, T + 1):
        for support in itertools.combinations(range(K), size):
            count += 1
            cols = list(support)
            c, *_ = np.linalg.lstsq(D[:, cols], y, rcond=None)
            res = float(np.linalg.norm(y - D[:, cols] @ c))
            if res < best_res - tie:
                best_res = res
                best_coef = np.zeros(K)
                best_coef[cols] = c
    return PursuitResult(best_coef, best_res, count)


__all__ = [
    "PursuitResult",
    "omp",
    "batch_omp",
    "omp_dense",
    "ista_l1",
    "l1_objective",
    "soft_threshold",
    "exhaustive_l0",
]
