"""Binary classification metrics on the positive (malicious / adversarial) class."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def as_dict(self) -> dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def _ratio(num: float, den: float, name: str) -> float:
    # 0/0 is reported as 0
    if den == 0:
        warnings.warn(f"{name} undefined (0/0); reported as 0", RuntimeWarning, stacklevel=3)
        return 0.0
    return num / den


def precision(tp: int, fp: int) -> float:
    return _ratio(tp, tp + fp, "precision")


def recall(tp: int, fn: int) -> float:
    return _ratio(tp, tp + fn, "recall")


def f1_score(p: float, r: float) -> float:
    return _ratio(2.0 * p * r, p + r, "f1")


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    """Return (tp, fp, fn, tn) with 1 as the positive class."""
    y_true = np.asarray(y_true).astype(bool).ravel()
    y_pred = np.asarray(y_pred).astype(bool).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label length mismatch: {y_true.shape} vs {y_pred.shape}")
    tp = int(np.sum(y_true & y_pred))
    fp = int(np.sum(~y_true & y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    tn = int(np.sum(~y_true & ~y_pred))
    return tp, fp, fn, tn


def binary_metrics(y_true, y_pred) -> Metrics:
    tp, fp, fn, tn = confusion(y_true, y_pred)
    p = precision(tp, fp)
    r = recall(tp, fn)
    return Metrics(p, r, f1_score(p, r), tp, fp, fn, tn)


def detection_rate(y_true, y_pred) -> float:
    """Recall on the adversarial class."""
    tp, _, fn, _ = confusion(y_true, y_pred)
    return recall(tp, fn)


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if y_true.size == 0:
        return 0.0
    return float(np.mean(y_true.astype(bool) == y_pred.astype(bool)))
