"""Predictions and performance measures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class Prediction:
    """Per-row predictions.  For classification ``truth``/``response`` are class
    codes into ``class_names`` and ``prob`` (optional) has one column per class."""

    def __init__(self, task_type: str, row_ids, truth, response, prob=None, class_names=()):
        self.task_type = task_type
        self.row_ids = np.asarray(row_ids, dtype=np.int64)
        self.truth = None if truth is None else np.asarray(truth)
        self.response = np.asarray(response)
        self.prob = None if prob is None else np.asarray(prob, dtype=np.float64)
        self.class_names = tuple(class_names)
        if self.prob is not None and self.prob.shape != (len(self.row_ids), len(self.class_names)):
            raise ValueError("prob must have one row per prediction and one column per class")

    def __len__(self):
        return len(self.row_ids)

    def __repr__(self):
        return f"<Prediction {self.task_type} n={len(self)}{' with prob' if self.prob is not None else ''}>"

    @property
    def response_labels(self) -> list:
        if self.task_type != "classif":
            return list(self.response)
        return [self.class_names[c] for c in self.response]

    def score(self, measures) -> dict:
        if isinstance(measures, (Measure, str)):
            measures = [measures]
        out = {}
        for m in measures:
            m = msr(m) if isinstance(m, str) else m
            out[m.id] = m.score(self)
        return out

    @staticmethod
    def concat(preds: list["Prediction"]) -> "Prediction":
        first = preds[0]
        prob = None if first.prob is None else np.concatenate([p.prob for p in preds])
        truth = None if first.truth is None else np.concatenate([p.truth for p in preds])
        return Prediction(first.task_type, np.concatenate([p.row_ids for p in preds]), truth,
                          np.concatenate([p.response for p in preds]), prob, first.class_names)


@dataclass(frozen=True)
class Measure:
    id: str
    fn: Callable[[Prediction], float]
    minimize: bool = True
    task_type: str | None = None
    needs_prob: bool = False

    def score(self, pred: Prediction) -> float:
        if self.task_type is not None and pred.task_type != self.task_type:
            raise ValueError(f"{self.id} applies to {self.task_type} predictions")
        if self.needs_prob and pred.prob is None:
            raise ValueError(f"{self.id} needs probabilities (predict_type='prob')")
        if pred.truth is None:
            raise ValueError(f"{self.id} needs the ground truth")
        return float(self.fn(pred))

    def better(self, a: float, b: float, min_delta: float = 0.0) -> bool:
        """Whether ``a`` strictly improves on ``b``."""
        return a < b - min_delta if self.minimize else a > b + min_delta

    def __repr__(self):
        return f"<Measure:{self.id}>"


def _mse(p):
    return float(np.mean((p.response.astype(np.float64) - p.truth.astype(np.float64)) ** 2))


def _logloss(p):
    eps = 1e-15
    picked = p.prob[np.arange(len(p.truth)), p.truth]
    return float(-np.mean(np.log(np.clip(picked, eps, 1.0))))


def roc_points(pred: Prediction, positive: int = 0) -> np.ndarray:
    """ROC curve as rows (threshold, fpr, tpr), thresholds descending from +inf."""
    if pred.prob is None:
        raise ValueError("ROC needs probabilities")
    score = pred.prob[:, positive]
    pos = pred.truth == positive
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    order = np.argsort(-score, kind="stable")
    s, y = score[order], pos[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1] if len(s) else np.array([], dtype=int)
    thr = np.r_[np.inf, s[last]]
    tpr = np.r_[0.0, tp[last] / n_pos if n_pos else np.zeros(len(last))]
    fpr = np.r_[0.0, fp[last] / n_neg if n_neg else np.zeros(len(last))]
    return np.column_stack([thr, fpr, tpr])


def _auc(p):
    if len(p.class_names) != 2:
        raise ValueError("auc needs a binary task")
    roc = roc_points(p)
    if np.isnan(roc[:, 1:]).any() or roc[-1, 1] == 0 or roc[-1, 2] == 0:
        return math.nan
    return float(np.trapezoid(roc[:, 2], roc[:, 1]) if hasattr(np, "trapezoid") else np.trapz(roc[:, 2], roc[:, 1]))


MEASURES = {
    "regr.mse": Measure("regr.mse", _mse, True, "regr"),
    "regr.rmse": Measure("regr.rmse", lambda p: math.sqrt(_mse(p)), True, "regr"),
    "regr.mae": Measure("regr.mae", lambda p: float(np.mean(np.abs(p.response - p.truth))), True, "regr"),
    "classif.ce": Measure("classif.ce", lambda p: float(np.mean(p.response != p.truth)), True, "classif"),
    "classif.acc": Measure("classif.acc", lambda p: float(np.mean(p.response == p.truth)), False, "classif"),
    "classif.logloss": Measure("classif.logloss", _logloss, True, "classif", True),
    "classif.auc": Measure("classif.auc", _auc, False, "classif", True),
}
_SHORT = {k.split(".", 1)[1]: k for k in MEASURES}

INTERNAL_VALID_SCORE = "internal_valid_score"


def msr(id: str, minimize: bool | None = None) -> Measure:
    """Look up a measure; ``"internal_valid_score"`` scores a run by its last validation value."""
    if id == INTERNAL_VALID_SCORE:
        return Measure(INTERNAL_VALID_SCORE, lambda p: math.nan, True if minimize is None else minimize)
    key = _SHORT.get(id, id)
    if key not in MEASURES:
        raise ValueError(f"unknown measure {id!r}")
    m = MEASURES[key]
    if minimize is not None and minimize != m.minimize:
        raise ValueError(f"{id} has a fixed direction")
    return m


def as_measures(xs) -> list[Measure]:
    if xs is None:
        return []
    if isinstance(xs, (str, Measure)):
        xs = [xs]
    return [msr(x) if isinstance(x, str) else x for x in xs]
