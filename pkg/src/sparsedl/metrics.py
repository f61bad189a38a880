"""Classification metrics and entropy-based uncertainty selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .core import DataError


@dataclass
class MetricsBundle:
    """Accuracy, macro-F1, per-class scores and the confusion matrix.

    ``confusion[i, j]`` counts samples of true class ``i`` predicted as
    ``j``.  ``absent`` lists classes missing from both truth and
    predictions; they score F1 = 0 and still count in the macro average.
    ``seconds`` is wall-clock time and is kept out of :meth:`to_json` so
    the JSON depends only on the predictions.
    """

    accuracy: float
    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    confusion: np.ndarray
    absent: List[int] = field(default_factory=list)
    seconds: float = 0.0
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def to_dict(self) -> dict:
        out = {
            "accuracy": float(self.accuracy),
            "macro_f1": float(self.macro_f1),
            "f1_average": "macro",
            "per_class_f1": [float(v) for v in self.f1],
            "per_class_precision": [float(v) for v in self.precision],
            "per_class_recall": [float(v) for v in self.recall],
            "confusion": self.confusion.astype(int).tolist(),
            "absent_classes": [int(c) for c in self.absent],
        }
        for k, v in sorted(self.extra.items()):
            out[k] = v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def metrics(predictions, truth, n_classes: Optional[int] = None) -> MetricsBundle:
    """Score integer ``predictions`` against ``truth``.

    Precision, recall or F1 with a zero denominator are reported as 0.
    """
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    true = np.asarray(truth, dtype=np.int64).reshape(-1)
    if pred.size != true.size:
        raise DataError(f"length mismatch: {pred.size} predictions, {true.size} labels")
    if pred.size == 0:
        raise DataError("cannot score an empty prediction set")
    C = int(max(pred.max(), true.max())) + 1 if n_classes is None else int(n_classes)
    if min(pred.min(), true.min()) < 0 or max(pred.max(), true.max()) >= C:
        raise DataError(f"labels must lie in [0, {C})")
    conf = np.zeros((C, C), dtype=np.int64)
    np.add.at(conf, (true, pred), 1)
    tp = np.diag(conf).astype(np.float64)
    support = conf.sum(axis=1).astype(np.float64)
    predicted = conf.sum(axis=0).astype(np.float64)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, support)
    f1 = _ratio(2 * tp, support + predicted)
    absent = [int(c) for c in np.flatnonzero((support == 0) & (predicted == 0))]
    return MetricsBundle(
        accuracy=float(tp.sum() / pred.size),
        macro_f1=float(f1.mean()),
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=conf,
        absent=absent,
    )


def entropy(p) -> float:
    """Shannon entropy in nats with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_select(candidates, tie_tol: float = 1e-12) -> int:
    """Index of the most uncertain probability vector (max entropy).

    Entropies within ``tie_tol`` of the maximum tie, and the lowest index
    among them wins.
    """
    if len(candidates) == 0:
        raise DataError("no candidates")
    ent = []
    for i, p in enumerate(candidates):
        p = np.asarray(p, dtype=np.float64).reshape(-1)
        if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
            raise DataError(f"candidate {i} is not a probability vector")
        ent.append(entropy(p))
    ent = np.asarray(ent)
    return int(np.flatnonzero(ent >= ent.max() - tie_tol)[0])
