"""Dictionary update rules and alternating learners.

All learners alternate batch OMP with a dictionary update:

* ``mod``        -- regularized pseudo-inverse update of the whole dictionary
* ``ksvd``       -- per-atom rank-1 SVD of the restricted residual
* ``approx_ksvd``-- one alternating power-style pass per atom instead of an SVD
* :func:`dksvd`  -- approximate K-SVD on the label-augmented system
  ``[Y; sqrt(alpha) H]`` followed by :func:`extract_shared`

Atoms that no sample uses are replaced by the worst-represented sample.
After every update the largest-magnitude entry of an atom is made
positive (the coefficient row is flipped with it), which removes the SVD
sign ambiguity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import DataError, Dictionary, NumericalError, SparseCodes, normalize_columns, register_model, sign_canonical
from .mlp import ridge_init
from .sparse_coding import omp_dense

MOD_RIDGE = 1e-10


class DeadAtomError(NumericalError):
    pass


@dataclass
class LearnTrace:
    """Per-iteration diagnostics of an alternating learner.

    ``coding_objective[i]`` is ``||Y - D X||_F^2`` right after sparse coding
    in iteration ``i`` and ``objective[i]`` the same quantity after the
    dictionary update that follows it.  ``atom_objective[i]`` (filled only
    when requested) holds the objective after each single atom update.
    """

    objective: List[float] = field(default_factory=list)
    coding_objective: List[float] = field(default_factory=list)
    replaced: List[int] = field(default_factory=list)
    atom_objective: List[List[float]] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.objective)


def init_dictionary(Y, K: int, rng) -> np.ndarray:
    """``K`` distinct non-zero training columns, normalized."""
    Y = np.asarray(Y, dtype=np.float64)
    nz = np.flatnonzero(np.linalg.norm(Y, axis=0) > 0)
    if K > nz.size:
        raise DataError(f"cannot initialize {K} atoms from {nz.size} non-zero samples")
    pick = np.sort(rng.choice(nz, size=K, replace=False))
    D, _ = normalize_columns(Y[:, pick])
    return D


def _frob2(R) -> float:
    return float(np.einsum("ij,ij->", R, R))


def _canonicalize(D, X, k):
    s = sign_canonical(D[:, k : k + 1])[0]
    if s < 0:
        D[:, k] = -D[:, k]
        X[k] = -X[k]


def _replace_dead(D, R, k, used) -> int:
    """Point atom ``k`` at the sample with the largest residual not yet used."""
    norms = np.einsum("ij,ij->j", R, R)
    if used:
        norms[list(used)] = -1.0
    n = int(np.argmax(norms))
    if norms[n] <= 0:
        raise DeadAtomError(f"atom {k} is unused and every sample is already represented exactly")
    used.add(n)
    D[:, k] = R[:, n] / math.sqrt(norms[n])
    return n


def _sweep(Y, D, X, method: str, atom_log: Optional[list] = None) -> int:
    """One pass over all atoms, updating ``D`` and ``X`` in place.

    A full residual ``R = Y - D X`` is kept current so that each atom costs
    ``O(d * |support|)``.  Returns the number of replaced atoms.  When
    ``atom_log`` is a list, ``||R||_F^2`` is appended after every atom.
    """
    R = Y - D @ X
    used: set = set()
    replaced = 0
    for k in range(D.shape[1]):
        replaced += _update_atom(D, X, R, k, method, used)
        if atom_log is not None:
            atom_log.append(_frob2(R))
    return replaced


def _update_atom(D, X, R, k, method, used) -> int:
    omega = np.flatnonzero(X[k])
    if omega.size == 0:
        _replace_dead(D, R, k, used)
        _canonicalize(D, X, k)
        return 1
    d_old = D[:, k].copy()
    g_old = X[k, omega].copy()
    if method == "ksvd":
        E = R[:, omega] + np.outer(d_old, g_old)
        U, s, Vt = np.linalg.svd(E, full_matrices=False)
        d_new = U[:, 0]
        g_new = s[0] * Vt[0]
    else:
        Eg = R[:, omega] @ g_old + d_old * (g_old @ g_old)
        nrm = np.linalg.norm(Eg)
        if nrm == 0:
            X[k, omega] = 0.0
            R[:, omega] += np.outer(d_old, g_old)
            _replace_dead(D, R, k, used)
            _canonicalize(D, X, k)
            return 1
        d_new = Eg / nrm
        g_new = R[:, omega].T @ d_new + g_old * (d_old @ d_new)
    D[:, k] = d_new
    X[k, omega] = g_new
    _canonicalize(D, X, k)
    R[:, omega] += np.outer(d_old, g_old) - np.outer(D[:, k], X[k, omega])
    return 0


def ksvd_atom_update(Y, D, X, k: int, method: str = "ksvd") -> Tuple[np.ndarray, np.ndarray]:
    """Updated atom ``k`` and coefficient row ``k`` (inputs are not modified).

    On the samples that use atom ``k`` the residual without the atom,
    ``E = Y - sum_{j != k} d_j x_j``, is replaced by its best rank-1
    approximation (``method="ksvd"``) or by one alternating pass
    ``d <- E x / ||E x||, x <- E^T d`` (``method="approx"``).  An unused atom
    is replaced by the normalized sample with the largest residual.
    """
    if method not in ("ksvd", "approx"):
        raise DataError(f"unknown method {method!r}")
    Y = np.asarray(Y, dtype=np.float64)
    D = np.array(D, dtype=np.float64)
    X = np.array(X, dtype=np.float64)
    if not 0 <= k < D.shape[1]:
        raise DataError(f"atom index {k} out of range")
    omega = np.flatnonzero(X[k])
    R = Y - D @ X
    if omega.size == 0:
        _replace_dead(D, R, k, set())
    else:
        E = R[:, omega] + np.outer(D[:, k], X[k, omega])
        if method == "ksvd":
            U, s, Vt = np.linalg.svd(E, full_matrices=False)
            D[:, k], X[k, omega] = U[:, 0], s[0] * Vt[0]
        else:
            Eg = E @ X[k, omega]
            D[:, k] = Eg / np.linalg.norm(Eg)
            X[k, omega] = E.T @ D[:, k]
    _canonicalize(D, X, k)
    return D[:, k], X[k]


def mod_update(Y, X) -> Tuple[Dictionary, np.ndarray]:
    """Least-squares dictionary for fixed codes.

    ``D = Y X^T (X X^T + 1e-10 I)^{-1}``; atoms are then normalized and the
    corresponding rows of ``X`` scaled inversely.  Returns the dictionary
    and the rescaled codes.
    """
    Y = np.asarray(Y, dtype=np.float64)
    X = np.array(X.to_dense() if isinstance(X, SparseCodes) else X, dtype=np.float64)
    K = X.shape[0]
    D = np.linalg.solve(X @ X.T + MOD_RIDGE * np.eye(K), X @ Y.T).T
    _finish_mod(Y, D, X)
    return Dictionary(D), X


def _finish_mod(Y, D, X):
    norms = np.linalg.norm(D, axis=0)
    dead = np.flatnonzero((norms < 1e-12) | ~X.any(axis=1))
    if dead.size:
        X[dead] = 0.0
        D[:, dead] = 0.0
        R = Y - D @ X
        used: set = set()
        for k in dead:
            _replace_dead(D, R, k, used)
        norms = np.linalg.norm(D, axis=0)
    D /= norms
    X *= norms[:, None]
    s = sign_canonical(D)
    D *= s
    X *= s[:, None]
    return dead.size


def learn_dictionary(
    Y,
    K: int,
    T: int,
    iters: int,
    method: str = "ksvd",
    D_init=None,
    seed: int = 0,
    workers: int = 1,
    eps=None,
    trace_atoms: bool = False,
):
    """Alternate batch OMP and a dictionary update for ``iters`` iterations.

    ``method`` is one of ``"ksvd"``, ``"approx"`` or ``"mod"``.  Without
    ``D_init`` the dictionary starts from ``K`` random distinct training
    samples (seeded).  Returns ``(Dictionary, SparseCodes, LearnTrace)``;
    the codes are the ones refined by the final update.
    """
    if method not in ("ksvd", "approx", "mod"):
        raise DataError(f"unknown method {method!r}")
    Y = np.asarray(Y, dtype=np.float64)
    if iters < 1:
        raise DataError("iters must be >= 1")
    if D_init is None:
        if K > Y.shape[1]:
            raise DataError(f"K={K} exceeds the number of samples N={Y.shape[1]}")
        D = init_dictionary(Y, K, np.random.default_rng(seed))
    else:
        D = np.array(D_init, dtype=np.float64)
        D, norms = normalize_columns(D)
        if np.any(norms == 0):
            raise DataError("D_init has a zero column")
        K = D.shape[1]
    trace = LearnTrace()
    X = None
    for _ in range(iters):
        X, _, _ = omp_dense(Y, D, T, eps, workers)
        trace.coding_objective.append(_frob2(Y - D @ X))
        if method == "mod":
            Dm = np.linalg.solve(X @ X.T + MOD_RIDGE * np.eye(K), X @ Y.T).T
            n_rep = _finish_mod(Y, Dm, X)
            D = Dm
        else:
            log = [] if trace_atoms else None
            n_rep = _sweep(Y, D, X, method, log)
            if trace_atoms:
                trace.atom_objective.append(log)
        trace.replaced.append(int(n_rep))
        trace.objective.append(_frob2(Y - D @ X))
    return Dictionary(D), SparseCodes.from_dense(X), trace


def ksvd(Y, K: int, T: int, iters: int, D_init=None, seed: int = 0, workers: int = 1, eps=None, trace_atoms: bool = False):
    """K-SVD; see :func:`learn_dictionary`."""
    return learn_dictionary(Y, K, T, iters, "ksvd", D_init, seed, workers, eps, trace_atoms)


def approx_ksvd(Y, K: int, T: int, iters: int, D_init=None, seed: int = 0, workers: int = 1, eps=None, trace_atoms: bool = False):
    """Approximate K-SVD (one power pass per atom); see :func:`learn_dictionary`."""
    return learn_dictionary(Y, K, T, iters, "approx", D_init, seed, workers, eps, trace_atoms)


def mod(Y, K: int, T: int, iters: int, D_init=None, seed: int = 0, workers: int = 1, eps=None):
    """Method of optimal directions; see :func:`learn_dictionary`."""
    return learn_dictionary(Y, K, T, iters, "mod", D_init, seed, workers, eps)


def atom_recovery(D_true, D_hat, threshold: float = 0.99) -> float:
    """Fraction of true atoms matched one-to-one by a learned atom with
    ``|cos| > threshold``.

    Pairs are matched greedily in decreasing order of ``|cos|``.
    """
    A, _ = normalize_columns(np.asarray(D_true))
    B, _ = normalize_columns(np.asarray(D_hat))
    C = np.abs(A.T @ B)
    order = np.argsort(-C, axis=None, kind="stable")
    used_a = np.zeros(C.shape[0], bool)
    used_b = np.zeros(C.shape[1], bool)
    hits = 0
    for flat in order:
        i, j = divmod(int(flat), C.shape[1])
        if C[i, j] <= threshold:
            break
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        hits += 1
    return hits / C.shape[0]


# ---------------------------------------------------------------------------
# discriminative K-SVD


@register_model("dksvd")
@dataclass(eq=False)
class DksvdModel:
    """Stacked dictionary ``P = [D; sqrt(alpha) W]`` (unit-norm columns),
    the extracted shared dictionary and the ``C x K`` linear classifier."""

    P: np.ndarray
    shared: Dictionary
    W: np.ndarray
    alpha: float

    @property
    def d(self) -> int:
        return self.shared.d

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    def predict(self, X) -> np.ndarray:
        return linear_predict(self.W, X)

    def to_record(self):
        return {"alpha": self.alpha, "partition": _part_json(self.shared)}, {"P": self.P, "shared": self.shared.atoms, "W": self.W}

    @classmethod
    def from_record(cls, meta, arrays):
        part = meta["partition"]
        part = None if part is None else {int(c): (a, b) for c, a, b in part}
        return cls(arrays["P"], Dictionary(arrays["shared"], part), arrays["W"], meta["alpha"])


def _part_json(D: Dictionary):
    if D.class_partition is None:
        return None
    return [[c, a, b] for c, (a, b) in sorted(D.class_partition.items())]


def extract_shared(P, d: int, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """Split a stacked dictionary into the shared dictionary and classifier.

    For each column ``k`` with top part norm ``n_k``:
    ``D_s[:, k] = P[:d, k] / n_k`` and ``W[:, k] = P[d:, k] / sqrt(alpha) / n_k``.
    This keeps ``W x`` consistent with codes computed against ``D_s``.
    With ``alpha == 0`` the label rows carry no information and ``W`` is zero.
    """
    P = np.asarray(P, dtype=np.float64)
    if not 0 < d <= P.shape[0]:
        raise DataError(f"d={d} incompatible with stacked dictionary of {P.shape[0]} rows")
    if alpha < 0:
        raise DataError("alpha must be >= 0")
    top, bottom = P[:d], P[d:]
    n = np.linalg.norm(top, axis=0)
    dead = np.flatnonzero(n < 1e-12)
    if dead.size:
        raise DeadAtomError(f"atom {int(dead[0])} has no signal content (top-part norm {n[dead[0]]:.2e})")
    Ds = top / n
    if alpha == 0:
        W = np.zeros_like(bottom)
    else:
        W = bottom / math.sqrt(alpha) / n
    return Ds, W


def linear_predict(W, X) -> np.ndarray:
    """Class index ``argmax_c (W X)[c]`` per column (ties -> lowest class)."""
    X = X.to_dense() if isinstance(X, SparseCodes) else np.asarray(X, dtype=np.float64)
    return np.argmax(np.asarray(W) @ X, axis=0)


def linear_classify(W, code) -> int:
    code = np.asarray(code, dtype=np.float64).reshape(-1)
    return int(np.argmax(np.asarray(W) @ code))


def dksvd(
    Y,
    H,
    alpha: float,
    K: Optional[int],
    T: int,
    iters: int,
    D_init=None,
    W_init=None,
    ridge_lambda: float = 1.0,
    seed: int = 0,
    workers: int = 1,
    trace_atoms: bool = False,
):
    """Discriminative K-SVD.

    Runs approximate K-SVD on ``[Y; sqrt(alpha) H]`` starting from the
    column-normalized ``[D_init; sqrt(alpha) W_init]``.  ``D_init`` defaults
    to ``K`` random training columns and ``W_init`` to the ridge classifier
    fitted on OMP codes of ``Y`` against ``D_init``.

    Returns ``(DksvdModel, SparseCodes, LearnTrace)``; the codes are those
    of the stacked problem.
    """
    Y = np.asarray(Y, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != Y.shape[1]:
        raise DataError("H must be C x N with the same N as Y")
    if alpha < 0:
        raise DataError("alpha must be >= 0")
    d = Y.shape[0]
    partition = None
    if D_init is None:
        if K is None:
            raise DataError("either K or D_init is required")
        D0 = init_dictionary(Y, K, np.random.default_rng(seed))
    else:
        if isinstance(D_init, Dictionary):
            partition = D_init.class_partition
        D0, norms = normalize_columns(np.asarray(D_init, dtype=np.float64))
        if np.any(norms == 0):
            raise DataError("D_init has a zero column")
    if W_init is None:
        X0, _, _ = omp_dense(Y, D0, T, None, workers)
        W_init = ridge_init(X0, H, ridge_lambda)
    W_init = np.asarray(W_init, dtype=np.float64)
    if W_init.shape != (H.shape[0], D0.shape[1]):
        raise DataError(f"W_init must have shape {(H.shape[0], D0.shape[1])}, got {W_init.shape}")
    root = math.sqrt(alpha)
    Ystack = np.vstack([Y, root * H])
    Pstart = np.vstack([D0, root * W_init])
    P, codes, trace = approx_ksvd(Ystack, D0.shape[1], T, iters, D_init=Pstart, workers=workers, trace_atoms=trace_atoms)
    Ds, W = extract_shared(P.atoms, d, alpha)
    model = DksvdModel(P.atoms, Dictionary(Ds, partition), W, float(alpha))
    return model, codes, trace
