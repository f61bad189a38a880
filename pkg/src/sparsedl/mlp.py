"""A small multilayer perceptron written directly in numpy.

Topology (samples are columns)::

    dense(K_in -> h1) + ReLU -> batch-norm -> dropout
    -> dense(h1 -> h2) + ReLU -> dense(h2 -> C) -> softmax

Trained with mini-batch SGD on the mean categorical cross-entropy.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from .core import DataError, NumericalError, SparseCodes, register_model

BN_EPS = 1e-5
PARAM_NAMES = ("W1", "b1", "gamma", "beta", "W2", "b2", "W3", "b3")


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch


def ridge_init(X, H, lam: float) -> np.ndarray:
    """Ridge-regression classifier ``W`` (``C x K``) with ``W X ~ H``.

    Codes ``X`` are ``K x N`` and labels ``H`` are ``C x N`` (columns are
    samples), so the usual row-sample closed form
    ``(X^T X + lam I)^{-1} X^T H`` appears here transposed:
    ``W = H X^T (X X^T + lam I)^{-1}``.
    """
    if lam < 0:
        raise DataError("lambda must be >= 0")
    X = X.to_dense() if isinstance(X, SparseCodes) else np.asarray(X, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if X.shape[1] < 1 or X.shape[1] != H.shape[1]:
        raise DataError(f"X ({X.shape}) and H ({H.shape}) need the same non-zero number of columns")
    A = X @ X.T + lam * np.eye(X.shape[0])
    if lam == 0 and np.linalg.cond(A) > 1e12:
        raise NumericalError("X X^T is singular; use a ridge parameter lambda > 0")
    try:
        return np.linalg.solve(A, X @ H.T).T
    except np.linalg.LinAlgError:
        raise NumericalError("ridge system is singular; use lambda > 0") from None


def softmax(Z):
    Z = Z - Z.max(axis=0, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=0, keepdims=True)


def _log_softmax(Z):
    Z = Z - Z.max(axis=0, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=0, keepdims=True))


@register_model("mlp")
class MlpModel:
    """Parameters and batch-norm state of the network.

    ``params`` maps ``W1 b1 gamma beta W2 b2 W3 b3`` to arrays; weights are
    ``(fan_out, fan_in)``.  ``running_mean``/``running_var`` follow
    ``r <- momentum * r + (1 - momentum) * batch_stat`` during training.
    """

    def __init__(self, params: Dict[str, np.ndarray], running_mean, running_var, dropout=0.3, momentum=0.9, seed=0):
        if not 0 <= dropout < 1:
            raise DataError("dropout rate must be in [0, 1)")
        self.params = {k: np.array(params[k], dtype=np.float64) for k in PARAM_NAMES}
        self.running_mean = np.array(running_mean, dtype=np.float64)
        self.running_var = np.array(running_var, dtype=np.float64)
        self.dropout = float(dropout)
        self.momentum = float(momentum)
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        h1, n_in = self.params["W1"].shape
        h2 = self.params["W2"].shape[0]
        C = self.params["W3"].shape[0]
        expect = {"b1": (h1,), "gamma": (h1,), "beta": (h1,), "W2": (h2, h1), "b2": (h2,), "W3": (C, h2), "b3": (C,)}
        for k, shp in expect.items():
            if self.params[k].shape != shp:
                raise DataError(f"parameter {k} has shape {self.params[k].shape}, expected {shp}")

    @classmethod
    def create(cls, n_in: int, h1: int = 256, h2: int = 128, n_out: int = 10, dropout: float = 0.3, momentum: float = 0.9, seed: int = 0):
        """He-uniform weights ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
        rng = np.random.default_rng(seed)

        def dense(fan_out, fan_in):
            lim = math.sqrt(6.0 / fan_in)
            return rng.uniform(-lim, lim, size=(fan_out, fan_in))

        params = {
            "W1": dense(h1, n_in),
            "b1": np.zeros(h1),
            "gamma": np.ones(h1),
            "beta": np.zeros(h1),
            "W2": dense(h2, h1),
            "b2": np.zeros(h2),
            "W3": dense(n_out, h2),
            "b3": np.zeros(n_out),
        }
        return cls(params, np.zeros(h1), np.ones(h1), dropout, momentum, seed)

    @property
    def sizes(self):
        return (self.params["W1"].shape[1], self.params["W1"].shape[0], self.params["W2"].shape[0], self.params["W3"].shape[0])

    def copy(self) -> "MlpModel":
        return MlpModel(self.params, self.running_mean, self.running_var, self.dropout, self.momentum, self.seed)

    def __eq__(self, other):
        if not isinstance(other, MlpModel):
            return NotImplemented
        return (
            all(np.array_equal(self.params[k], other.params[k]) for k in PARAM_NAMES)
            and np.array_equal(self.running_mean, other.running_mean)
            and np.array_equal(self.running_var, other.running_var)
            and (self.dropout, self.momentum, self.seed) == (other.dropout, other.momentum, other.seed)
        )

    def to_record(self):
        arrays = dict(self.params)
        arrays["running_mean"] = self.running_mean
        arrays["running_var"] = self.running_var
        return {"dropout": self.dropout, "momentum": self.momentum, "seed": self.seed}, arrays

    @classmethod
    def from_record(cls, meta, arrays):
        return cls({k: arrays[k] for k in PARAM_NAMES}, arrays["running_mean"], arrays["running_var"], meta["dropout"], meta["momentum"], meta["seed"])

    def predict_proba(self, X) -> np.ndarray:
        return forward(self, X, "eval")

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=0)


def _as_batch(model: MlpModel, X) -> np.ndarray:
    X = X.to_dense() if isinstance(X, SparseCodes) else np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != model.sizes[0] or X.shape[1] < 1:
        raise DataError(f"expected a batch of shape ({model.sizes[0]}, B>=1), got {X.shape}")
    return X


def _forward(model: MlpModel, X, mode: str, rng=None):
    p = model.params
    z1 = p["W1"] @ X + p["b1"][:, None]
    a1 = np.maximum(z1, 0.0)
    if mode == "train":
        mu = a1.mean(axis=1)
        var = a1.var(axis=1)
    elif mode == "eval":
        mu, var = model.running_mean, model.running_var
    else:
        raise DataError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a1 - mu[:, None]) * inv_std[:, None]
    bn = p["gamma"][:, None] * xhat + p["beta"][:, None]
    if mode == "train" and model.dropout > 0:
        rng = model.rng if rng is None else rng
        mask = (rng.random(bn.shape) >= model.dropout) / (1.0 - model.dropout)
    else:
        mask = None
    h = bn if mask is None else bn * mask
    z2 = p["W2"] @ h + p["b2"][:, None]
    a2 = np.maximum(z2, 0.0)
    z3 = p["W3"] @ a2 + p["b3"][:, None]
    cache = dict(X=X, z1=z1, xhat=xhat, inv_std=inv_std, mu=mu, var=var, mask=mask, h=h, z2=z2, a2=a2, z3=z3)
    return z3, cache


def forward(model: MlpModel, X, mode: str = "eval", rng=None) -> np.ndarray:
    """Class probabilities, one column per input column.

    ``mode="train"`` normalizes with batch statistics and applies inverted
    dropout (masks drawn from ``rng``, default the model's own generator);
    ``mode="eval"`` uses the running statistics and no dropout.  The model
    is not modified.
    """
    z3, _ = _forward(model, _as_batch(model, X), mode, rng)
    return softmax(z3)


def loss_and_grads(model: MlpModel, X, H, mode: str = "train", rng=None):
    """Mean cross-entropy over the batch and its gradients w.r.t. ``params``.

    Also returns the batch-norm statistics used (for running averages) and
    the probabilities.
    """
    X = _as_batch(model, X)
    H = np.asarray(H, dtype=np.float64)
    B = X.shape[1]
    z3, c = _forward(model, X, mode, rng)
    logp = _log_softmax(z3)
    loss = float(-(H * logp).sum() / B)
    P = np.exp(logp)
    p = model.params
    g = {}
    dz3 = (P - H) / B
    g["W3"] = dz3 @ c["a2"].T
    g["b3"] = dz3.sum(axis=1)
    dz2 = (p["W3"].T @ dz3) * (c["z2"] > 0)
    g["W2"] = dz2 @ c["h"].T
    g["b2"] = dz2.sum(axis=1)
    dh = p["W2"].T @ dz2
    dbn = dh if c["mask"] is None else dh * c["mask"]
    xhat = c["xhat"]
    g["gamma"] = (dbn * xhat).sum(axis=1)
    g["beta"] = dbn.sum(axis=1)
    dxhat = dbn * p["gamma"][:, None]
    if mode == "train":
        da1 = (c["inv_std"][:, None] / B) * (
            B * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
    else:
        da1 = dxhat * c["inv_std"][:, None]
    dz1 = da1 * (c["z1"] > 0)
    g["W1"] = dz1 @ X.T
    g["b1"] = dz1.sum(axis=1)
    return loss, g, (c["mu"], c["var"]), P


@dataclass
class TrainReport:
    """Per-epoch learning curves; ``seconds`` is total wall-clock time."""

    train_loss: List[float] = field(default_factory=list)
    train_acc: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_acc: List[float] = field(default_factory=list)
    seconds: float = 0.0

    CSV_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for i in range(self.epochs):
            row = [i + 1, self.train_loss[i], self.train_acc[i]]
            row += [self.val_loss[i], self.val_acc[i]] if self.val_loss else ["", ""]
            w.writerow([x if isinstance(x, (int, str)) else repr(float(x)) for x in row])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainReport":
        rows = list(csv.DictReader(io.StringIO(text)))
        rep = cls()
        for r in rows:
            rep.train_loss.append(float(r["train_loss"]))
            rep.train_acc.append(float(r["train_acc"]))
            if r.get("val_loss"):
                rep.val_loss.append(float(r["val_loss"]))
                rep.val_acc.append(float(r["val_acc"]))
        return rep


def evaluate(model: MlpModel, X, H) -> tuple:
    """Eval-mode ``(mean cross-entropy, accuracy)``."""
    X = _as_batch(model, X)
    H = np.asarray(H, dtype=np.float64)
    z3, _ = _forward(model, X, "eval")
    logp = _log_softmax(z3)
    loss = float(-(H * logp).sum() / X.shape[1])
    acc = float(np.mean(np.argmax(z3, axis=0) == np.argmax(H, axis=0)))
    return loss, acc


def train(
    model: MlpModel,
    X,
    H,
    epochs: int,
    batch_size: int = 128,
    learning_rate: Union[float, Callable[[int], float]] = 0.01,
    X_val=None,
    H_val=None,
) -> TrainReport:
    """Mini-batch SGD on the cross-entropy; updates ``model`` in place.

    Samples are reshuffled every epoch using the model's generator.
    ``learning_rate`` is a constant or a function of the (0-based) epoch.
    Reported training loss/accuracy are batch-size weighted averages of the
    train-mode mini-batch values, as seen during the epoch.
    """
    X = _as_batch(model, X)
    H = np.asarray(H, dtype=np.float64)
    if H.shape != (model.sizes[3], X.shape[1]):
        raise DataError(f"labels must have shape {(model.sizes[3], X.shape[1])}, got {H.shape}")
    if X_val is not None:
        X_val = _as_batch(model, X_val)
    schedule = learning_rate if callable(learning_rate) else (lambda _e, lr=float(learning_rate): lr)
    N = X.shape[1]
    report = TrainReport()
    m = model.momentum
    t0 = time.perf_counter()
    for epoch in range(epochs):
        lr = schedule(epoch)
        order = model.rng.permutation(N)
        total_loss = 0.0
        correct = 0
        for s in range(0, N, batch_size):
            idx = order[s : s + batch_size]
            Hb = H[:, idx]
            loss, grads, (mu, var), P = loss_and_grads(model, X[:, idx], Hb, "train")
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            for k in PARAM_NAMES:
                model.params[k] -= lr * grads[k]
            model.running_mean = m * model.running_mean + (1 - m) * mu
            model.running_var = m * model.running_var + (1 - m) * var
            total_loss += loss * idx.size
            correct += int(np.sum(np.argmax(P, axis=0) == np.argmax(Hb, axis=0)))
        epoch_loss = total_loss / N
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch, epoch_loss)
        report.train_loss.append(epoch_loss)
        report.train_acc.append(correct / N)
        if X_val is not None:
            vl, va = evaluate(model, X_val, H_val)
            report.val_loss.append(vl)
            report.val_acc.append(va)
    report.seconds = time.perf_counter() - t0
    return report


def gradient_check(model: MlpModel, X, H, epsilon: float = 1e-5, max_entries: Optional[int] = None, seed: int = 0) -> float:
    """Largest relative error between backprop and central differences.

    Requires ``dropout == 0``; batch-norm runs on batch statistics (train
    mode), which is deterministic for a fixed batch.  Relative error of one
    entry is ``|a - n| / max(|a|, |n|, 1e-8)``.  With ``max_entries`` a
    seeded subsample of that many parameter entries is checked.
    """
    if model.dropout != 0:
        raise DataError("gradient check needs dropout == 0")
    X = _as_batch(model, X)
    _, grads, _, _ = loss_and_grads(model, X, H, "train")
    entries = [(k, i) for k in PARAM_NAMES for i in range(model.params[k].size)]
    if max_entries is not None and max_entries < len(entries):
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(entries), size=max_entries, replace=False))
        entries = [entries[i] for i in pick]
    worst = 0.0
    for k, i in entries:
        flat = model.params[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + epsilon
        lp, _, _, _ = loss_and_grads(model, X, H, "train")
        flat[i] = orig - epsilon
        lm, _, _, _ = loss_and_grads(model, X, H, "train")
        flat[i] = orig
        num = (lp - lm) / (2 * epsilon)
        ana = grads[k].reshape(-1)[i]
        err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        worst = max(worst, err)
    return worst
