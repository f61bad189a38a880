"""Fisher discrimination quantities on coefficient matrices.

Scatter matrices follow the textbook sums without class-size weighting of
the between-class term::

    Sw = sum_i sum_{x in class i} (x - m_i)(x - m_i)^T
    SB = sum_i (m_i - m)(m_i - m)^T

``fisher_g`` and the FDDL coding cost take a ``fisher_sign`` switch:
``"printed"`` gives ``tr(SB) - tr(Sw) + eta ||X||_F^2`` and
``"discriminative"`` gives ``tr(Sw) - tr(SB) + eta ||X||_F^2`` (minimizing
the latter shrinks classes and spreads their means).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DataError, SparseCodes
from .sparse_coding import soft_threshold

SIGNS = {"printed": 1.0, "discriminative": -1.0}


@dataclass(frozen=True)
class ScatterPair:
    Sw: np.ndarray
    SB: np.ndarray
    class_means: np.ndarray  # (C, K)
    mean: np.ndarray  # (K,)


def _dense(X) -> np.ndarray:
    X = X.to_dense() if isinstance(X, SparseCodes) else np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return X


def _classes(labels, n_classes: Optional[int]):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    C = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    return labels, C


def scatter(X, labels, n_classes: Optional[int] = None) -> ScatterPair:
    """Within- and between-class scatter of the columns of ``X`` (``K x N``)."""
    X = _dense(X)
    labels, C = _classes(labels, n_classes)
    if labels.size != X.shape[1]:
        raise DataError(f"{X.shape[1]} columns but {labels.size} labels")
    K = X.shape[0]
    means = np.zeros((C, K))
    Sw = np.zeros((K, K))
    for i in range(C):
        Xi = X[:, labels == i]
        if Xi.shape[1] == 0:
            raise DataError(f"class {i} has no samples")
        means[i] = Xi.mean(axis=1)
        Dv = Xi - means[i][:, None]
        Sw += Dv @ Dv.T
    m = X.mean(axis=1)
    Bv = (means - m).T
    SB = Bv @ Bv.T
    return ScatterPair(Sw, SB, means, m)


def fisher_g(X, labels, eta: float, fisher_sign: str = "printed", n_classes: Optional[int] = None) -> float:
    """``tr(SB) - tr(Sw) + eta * ||X||_F^2`` (or the flipped difference)."""
    if eta < 0:
        raise DataError("eta must be >= 0")
    X = _dense(X)
    sp = scatter(X, labels, n_classes)
    s = SIGNS[fisher_sign]
    return float(s * (np.trace(sp.SB) - np.trace(sp.Sw)) + eta * np.sum(X * X))


def _g_class(X_all, labels, cls, X_i, eta, sign, C):
    """g with class ``cls``'s block of ``X_all`` replaced by ``X_i``.

    The within-class term only involves class ``cls``.
    """
    X = X_all.copy()
    X[:, labels == cls] = X_i
    means = np.stack([X[:, labels == j].mean(axis=1) for j in range(C)])
    m = X.mean(axis=1)
    tr_sb = float(np.sum((means - m) ** 2))
    Dv = X_i - means[cls][:, None]
    tr_sw = float(np.sum(Dv * Dv))
    return sign * (tr_sb - tr_sw) + eta * float(np.sum(X * X))


def _check_block(Y_i, D, X_i, X_all, labels, cls):
    Y_i = np.asarray(Y_i, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    X_i = _dense(X_i)
    X_all = _dense(X_all)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if D.shape[0] != Y_i.shape[0] or D.shape[1] != X_i.shape[0] or X_i.shape[1] != Y_i.shape[1]:
        raise DataError("shape mismatch between Y_i, D and X_i")
    if X_all.shape[0] != X_i.shape[0] or X_all.shape[1] != labels.size:
        raise DataError("shape mismatch between X_all and labels")
    if int(np.sum(labels == cls)) != X_i.shape[1]:
        raise DataError(f"class {cls} has {int(np.sum(labels == cls))} samples but X_i has {X_i.shape[1]} columns")
    return Y_i, D, X_i, X_all, labels


def fddl_cost(Y_i, D, X_i, X_all, labels, cls: int, c1: float, c2: float, eta: float, fisher_sign: str = "printed") -> float:
    """``||Y_i - D X_i||_F^2 + c1 ||X_i||_1 + c2 g``, where ``g`` is evaluated
    on ``X_all`` with class ``cls``'s columns replaced by ``X_i``."""
    if min(c1, c2, eta) < 0:
        raise DataError("c1, c2 and eta must be >= 0")
    Y_i, D, X_i, X_all, labels = _check_block(Y_i, D, X_i, X_all, labels, cls)
    C = int(labels.max()) + 1
    R = Y_i - D @ X_i
    cost = float(np.sum(R * R)) + c1 * float(np.abs(X_i).sum())
    if c2:
        cost += c2 * _g_class(X_all, labels, cls, X_i, eta, SIGNS[fisher_sign], C)
    return cost


def fddl_smooth_grad(Y_i, D, X_i, X_all, labels, cls: int, c2: float, eta: float, fisher_sign: str = "printed"):
    """Gradient w.r.t. ``X_i`` of ``||Y_i - D X_i||_F^2 + c2 g``."""
    Y_i, D, X_i, X_all, labels = _check_block(Y_i, D, X_i, X_all, labels, cls)
    grad = -2.0 * D.T @ (Y_i - D @ X_i)
    if not c2:
        return grad
    C = int(labels.max()) + 1
    s = SIGNS[fisher_sign]
    X = X_all.copy()
    X[:, labels == cls] = X_i
    N = X.shape[1]
    n_i = X_i.shape[1]
    means = np.stack([X[:, labels == j].mean(axis=1) for j in range(C)])
    m = X.mean(axis=1)
    # d tr(SB) / d x for x in class cls (same for every column of the block)
    g_sb = 2.0 * (means[cls] - m) / n_i - (2.0 / N) * (means - m).sum(axis=0)
    g_sw = 2.0 * (X_i - means[cls][:, None])
    return grad + c2 * (s * (g_sb[:, None] - g_sw) + 2.0 * eta * X_i)


def fddl_code(
    Y_i,
    D,
    X_init,
    X_all,
    labels,
    cls: int,
    c1: float,
    c2: float,
    eta: float,
    fisher_sign: str = "printed",
    max_iter: int = 2000,
    tol: float = 1e-10,
):
    """Proximal gradient descent on :func:`fddl_cost` for class ``cls``.

    The smooth part is differentiated analytically and the l1 term handled
    by soft thresholding with a fixed step ``1/L``, where ``L`` bounds the
    smooth part's curvature.  The Fisher term can be non-convex, so the
    iterate with the lowest recorded cost is returned.

    Returns ``(X_best, cost_history, converged)``.
    """
    Y_i, D, X_i, X_all, labels = _check_block(Y_i, D, X_init, X_all, labels, cls)
    L = 2.0 * np.linalg.norm(D, 2) ** 2 + c2 * (6.0 + 2.0 * eta)
    if L == 0:
        L = 1.0
    step = 1.0 / L
    cost = fddl_cost(Y_i, D, X_i, X_all, labels, cls, c1, c2, eta, fisher_sign)
    history = [cost]
    best, best_cost = X_i, cost
    converged = False
    for _ in range(max_iter):
        G = fddl_smooth_grad(Y_i, D, X_i, X_all, labels, cls, c2, eta, fisher_sign)
        X_i = soft_threshold(X_i - step * G, c1 * step)
        new = fddl_cost(Y_i, D, X_i, X_all, labels, cls, c1, c2, eta, fisher_sign)
        history.append(new)
        if new < best_cost:
            best, best_cost = X_i, new
        if abs(new - cost) < tol:
            converged = True
            break
        cost = new
    return best, np.asarray(history), converged
