"""MAP sparse coding under a generalized-Gaussian prior and hard-EM
estimation of the noise variance and prior scale.

Model: ``y = D x + n`` with ``n ~ N(0, sigma2 I)`` and i.i.d. coefficients
with density proportional to ``exp(-alpha |x_j|^beta)``.  Only the shapes
``beta = 1`` (Laplacian, l1 penalty) and ``beta = 2`` (Gaussian, ridge)
have a solver here; ``0 < beta < 1`` makes the MAP problem non-convex and
is rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.special import gammaln

from .core import DataError, NumericalError
from .sparse_coding import PursuitResult, ista_l1

SIGMA2_FLOOR = 1e-12


class UnsupportedShapeError(DataError):
    pass


class DegenerateFitError(NumericalError):
    """EM drove a hyperparameter to a degenerate value.

    ``history`` holds the :class:`HyperParams` accumulated before the failure.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class GgPrior:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DataError("generalized-Gaussian prior needs alpha > 0 and beta > 0")


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise DataError("noise variance must be > 0")


@dataclass
class HyperParams:
    """Current ``(sigma2, alpha)`` and the EM trajectory."""

    sigma2: float
    alpha: float
    q_history: List[float] = field(default_factory=list)
    sigma2_history: List[float] = field(default_factory=list)
    alpha_history: List[float] = field(default_factory=list)
    converged: bool = False

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.alpha > 0):
            raise DataError("hyperparameters must be positive")


def log_posterior(y, D, x, prior: GgPrior, noise: NoiseModel) -> float:
    """Unnormalized log posterior of ``x``.

    ``-||y - D x||^2 / (2 sigma2) + sum_j [log(alpha beta / (2 Gamma(1/beta))) - alpha |x_j|^beta]``.
    The evidence ``p(y)`` and the Gaussian likelihood's normalizer are
    constants in ``x`` and are omitted.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    D = np.asarray(D, dtype=np.float64)
    r = y - D @ x
    a, b = prior.alpha, prior.beta
    log_norm = math.log(a * b / 2.0) - gammaln(1.0 / b)
    return float(-(r @ r) / (2.0 * noise.sigma2) + x.size * log_norm - a * np.sum(np.abs(x) ** b))


def map_code(y, D, prior: GgPrior, noise: NoiseModel, max_iter: int = 10000, tol: float = 1e-12, x0=None) -> PursuitResult:
    """MAP coefficient vector.

    ``beta == 2``: ridge closed form ``(D^T D + 2 sigma2 alpha I)^{-1} D^T y``.
    ``beta == 1``: :func:`ista_l1` with ``lam = 2 sigma2 alpha`` (same
    minimizer, since the negative log posterior is that objective scaled by
    ``1 / (2 sigma2)``).
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    D = np.asarray(D, dtype=np.float64)
    lam = 2.0 * noise.sigma2 * prior.alpha
    if prior.beta == 2:
        K = D.shape[1]
        x = np.linalg.solve(D.T @ D + lam * np.eye(K), D.T @ y)
        return PursuitResult(x, float(np.linalg.norm(y - D @ x)), 1)
    if prior.beta == 1:
        return ista_l1(y, D, lam, max_iter=max_iter, tol=tol, x0=x0)
    raise UnsupportedShapeError(f"no MAP solver for shape beta={prior.beta}; supported shapes are 1 and 2")


def complete_log_likelihood(y, D, x, sigma2: float, alpha: float, beta: float) -> float:
    """``log p(y, x | sigma2, alpha)`` with the prior properly normalized.

    The normalizer of ``exp(-alpha |t|^beta)`` is
    ``beta alpha^(1/beta) / (2 Gamma(1/beta))``; this is the quantity the
    EM loop maximizes (and records as Q).
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    r = y - np.asarray(D) @ x
    d, K = y.size, x.size
    loglik = -(r @ r) / (2.0 * sigma2) - 0.5 * d * math.log(2.0 * math.pi * sigma2)
    logprior = K * (math.log(beta / 2.0) + math.log(alpha) / beta - gammaln(1.0 / beta)) - alpha * np.sum(np.abs(x) ** beta)
    return float(loglik + logprior)


def m_step(y, D, x, beta: float) -> Tuple[float, float]:
    """Closed-form maximizers of :func:`complete_log_likelihood` in ``(sigma2, alpha)``."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    r = y - np.asarray(D) @ x
    sigma2 = float(r @ r) / y.size
    s = float(np.sum(np.abs(x) ** beta))
    alpha = x.size / (beta * s) if s > 0 else math.inf
    return sigma2, alpha


def em_hyperparameters(
    y,
    D,
    theta0: HyperParams,
    beta: float = 1.0,
    threshold: float = 1e-8,
    max_iter: int = 100,
    map_max_iter: int = 10000,
    map_tol: float = 1e-12,
) -> Tuple[PursuitResult, HyperParams]:
    """Hard-EM over ``theta = (sigma2, alpha)`` with the shape ``beta`` fixed.

    Each iteration computes the MAP code at the current ``theta``
    (warm-started from the previous code) and then maximizes the complete
    log-likelihood ``Q`` in closed form.  Both steps are coordinate ascent
    on ``Q``, so the recorded ``q_history`` is non-decreasing.  Stops when
    ``Q`` improves by at most ``threshold`` or after ``max_iter``
    iterations.  The returned code is the last E-step's estimate.

    Raises
    ------
    DegenerateFitError
        When ``sigma2`` collapses below ``1e-12`` or every coefficient is
        zero (``alpha`` unbounded).
    """
    if not threshold > 0:
        raise DataError("threshold must be > 0")
    if max_iter < 1:
        raise DataError("max_iter must be >= 1")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    D = np.asarray(D, dtype=np.float64)
    theta = HyperParams(theta0.sigma2, theta0.alpha)
    x = None
    result = None
    for _ in range(max_iter):
        prior = GgPrior(theta.alpha, beta)
        result = map_code(y, D, prior, NoiseModel(theta.sigma2), max_iter=map_max_iter, tol=map_tol, x0=x)
        x = result.coef
        sigma2, alpha = m_step(y, D, x, beta)
        if sigma2 < SIGMA2_FLOOR:
            raise DegenerateFitError(f"noise variance collapsed to {sigma2:.3e}", history=theta)
        if not math.isfinite(alpha):
            raise DegenerateFitError("all coefficients are zero; prior scale is unbounded", history=theta)
        q = complete_log_likelihood(y, D, x, sigma2, alpha, beta)
        theta.sigma2, theta.alpha = sigma2, alpha
        theta.sigma2_history.append(sigma2)
        theta.alpha_history.append(alpha)
        theta.q_history.append(q)
        if len(theta.q_history) > 1 and theta.q_history[-1] - theta.q_history[-2] <= threshold:
            theta.converged = True
            break
    return result, theta
