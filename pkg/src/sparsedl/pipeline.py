"""Sparse-code-trained MLP: class dictionaries, discriminative K-SVD,
shared-dictionary coding and an MLP on the codes.

Training runs these steps in order:

1. OMP + approximate K-SVD on each class's samples -> ``D_c``
2. ``D = [D_1 ... D_C]``
3. ridge classifier on OMP codes against ``D`` -> ``W_init``
4. discriminative K-SVD on ``[Y; sqrt(alpha) H]`` from ``(D, W_init)``
5. first ``d`` rows, renormalized -> shared dictionary ``D_s``
6. OMP codes of the training set against ``D_s``
7. MLP trained on those codes

Test signals are coded against the same ``D_s`` with the same budget.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DataError, Dataset, Dictionary, RunConfig, SparseCodes, nest_record, register_model, unnest_record
from .dictionary_learning import approx_ksvd, dksvd, linear_predict
from .metrics import MetricsBundle, metrics
from .mlp import MlpModel, TrainReport, evaluate, ridge_init, train
from .sparse_coding import batch_omp, omp_dense


@register_model("scmlp")
@dataclass(eq=False)
class ScmlpModel:
    shared: Dictionary
    W: np.ndarray
    mlp: MlpModel
    config: RunConfig

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.shape[1] != self.shared.K:
            raise DataError("classifier width does not match the shared dictionary")
        if self.mlp.sizes[0] != self.shared.K:
            raise DataError("MLP input size must equal the number of atoms")

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    def encode(self, Y, workers: Optional[int] = None) -> SparseCodes:
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[0] != self.shared.d:
            raise DataError(f"dimension mismatch: samples have {Y.shape[0] if Y.ndim else 0} rows, dictionary has {self.shared.d}")
        return batch_omp(Y, self.shared, self.config.sparsity, _eps(Y, self.config), workers or self.config.workers)

    def predict(self, Y) -> np.ndarray:
        return self.mlp.predict(self.encode(Y))

    def to_record(self):
        meta, arrays = {}, {"W": self.W}
        for key, part in (("shared", self.shared), ("mlp", self.mlp), ("config", self.config)):
            m, a = nest_record(key, part)
            meta[key] = m
            arrays.update(a)
        return meta, arrays

    @classmethod
    def from_record(cls, meta, arrays):
        parts = {k: unnest_record(k, meta[k], arrays) for k in ("shared", "mlp", "config")}
        return cls(parts["shared"], arrays["W"], parts["mlp"], parts["config"])


@dataclass
class PipelineReport:
    """What :func:`train_scmlp` measured.

    Dictionary learning and MLP training are timed separately.  When the
    MLP's validation accuracy falls below the linear read-out ``W``'s,
    ``mlp_below_linear`` is set.
    """

    training: TrainReport
    train_codes: SparseCodes
    dictionary_seconds: float
    mlp_seconds: float
    linear_val_acc: Optional[float] = None
    mlp_val_acc: Optional[float] = None

    @property
    def mlp_below_linear(self) -> bool:
        if self.linear_val_acc is None or self.mlp_val_acc is None:
            return False
        return self.mlp_val_acc < self.linear_val_acc


def _eps(Y, config: RunConfig):
    return config.omp_rel_tol * np.linalg.norm(Y, axis=0)


def _check_train(train_set: Dataset, config: RunConfig):
    C = train_set.n_classes
    if C < 2:
        raise DataError("at least two classes are required")
    counts = np.bincount(train_set.labels, minlength=C)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise DataError(f"class {int(missing[0])} is absent from the training data")
    small = np.flatnonzero(counts < config.atoms_per_class)
    if small.size:
        c = int(small[0])
        raise DataError(f"class {c} has {counts[c]} samples, fewer than atoms_per_class={config.atoms_per_class}")
    if config.sparsity > min(train_set.d, config.atoms_per_class):
        raise DataError("sparsity must not exceed the signal dimension or atoms_per_class")


def class_dictionaries(train_set: Dataset, config: RunConfig) -> Dictionary:
    """Approximate K-SVD per class, concatenated with a class partition."""
    Kc = config.atoms_per_class
    blocks, part = [], {}
    for c in range(train_set.n_classes):
        Yc = train_set.Y[:, train_set.labels == c]
        Dc, _, _ = approx_ksvd(Yc, Kc, config.sparsity, config.class_ksvd_iters, seed=config.seed + c, workers=config.workers, eps=_eps(Yc, config))
        blocks.append(Dc.atoms)
        part[c] = (c * Kc, (c + 1) * Kc)
    return Dictionary(np.hstack(blocks), part)


def train_scmlp(train_set: Dataset, val_set: Optional[Dataset], config: RunConfig):
    """Fit the full pipeline; returns ``(ScmlpModel, PipelineReport)``."""
    _check_train(train_set, config)
    if val_set is not None and val_set.N == 0:
        val_set = None
    if val_set is not None and val_set.d != train_set.d:
        raise DataError("validation set dimension differs from the training set")
    C = train_set.n_classes
    Y, H = train_set.Y, train_set.one_hot()
    eps = _eps(Y, config)

    t0 = time.perf_counter()
    D = class_dictionaries(train_set, config)
    X0, _, _ = omp_dense(Y, D, config.sparsity, eps, config.workers)
    W0 = ridge_init(X0, H, config.ridge_lambda)
    if config.dksvd_iters > 0:
        dk, _, _ = dksvd(
            Y, H, config.dksvd_alpha, None, config.sparsity, config.dksvd_iters,
            D_init=D, W_init=W0, ridge_lambda=config.ridge_lambda, seed=config.seed, workers=config.workers,
        )
        shared, W = dk.shared, dk.W
    else:
        shared, W = D, W0
    X_train = batch_omp(Y, shared, config.sparsity, eps, config.workers)
    dict_seconds = time.perf_counter() - t0

    mlp = MlpModel.create(shared.K, config.hidden1, config.hidden2, C, config.dropout, config.bn_momentum, config.seed)
    model = ScmlpModel(shared, W, mlp, config)
    X_val = H_val = None
    if val_set is not None:
        X_val = model.encode(val_set.Y)
        H_val = val_set.one_hot()
    t1 = time.perf_counter()
    training = train(mlp, X_train, H, config.epochs, config.batch_size, config.learning_rate, X_val, H_val)
    mlp_seconds = time.perf_counter() - t1

    report = PipelineReport(training, X_train, dict_seconds, mlp_seconds)
    if val_set is not None:
        report.linear_val_acc = float(np.mean(linear_predict(W, X_val) == val_set.labels))
        report.mlp_val_acc = evaluate(mlp, X_val, H_val)[1]
    return model, report


def evaluate_scmlp(model: ScmlpModel, test_set: Dataset) -> MetricsBundle:
    """Code ``test_set`` against the model's shared dictionary and score it.

    ``extra["linear_accuracy"]`` holds the accuracy of the linear read-out
    ``argmax W x`` on the same codes.
    """
    if test_set.N == 0:
        raise DataError("test set is empty")
    t0 = time.perf_counter()
    codes = model.encode(test_set.Y)
    pred = model.mlp.predict(codes)
    C = max(model.n_classes, test_set.n_classes)
    bundle = metrics(pred, test_set.labels, C)
    bundle.extra["linear_accuracy"] = float(np.mean(linear_predict(model.W, codes) == test_set.labels))
    bundle.seconds = time.perf_counter() - t0
    return bundle
