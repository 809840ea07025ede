"""Binary-classification metrics: ROC-AUC, average precision, balanced accuracy.

ROC-AUC uses the rank-statistic formulation (ties count one half), so it is
exactly the Mann-Whitney U statistic rescaled; average precision is the
step-wise sum over descending score thresholds with tied scores grouped at
one threshold; balanced accuracy thresholds logits at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values sharing their average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _check_binary(labels: np.ndarray, need_both: bool = True) -> np.ndarray:
    y = np.asarray(labels)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if need_both and (not (y == 0).any() or not (y == 1).any()):
        raise ValueError("both classes must be present")
    return y.astype(np.int64)


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _check_binary(np.asarray(labels).ravel())
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    rank_sum_pos = float(midranks(s)[y == 1].sum())
    u_pos = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u_pos / (n_pos * n_neg)


def average_precision(scores, labels) -> float:
    """Area under the precision-recall step curve, ties grouped."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _check_binary(np.asarray(labels).ravel(), need_both=False)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    ap = 0.0
    tp = 0
    seen = 0
    i = 0
    while i < s_sorted.size:
        j = i
        while j + 1 < s_sorted.size and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        tp_prev = tp
        tp += int(y_sorted[i : j + 1].sum())
        seen = j + 1
        if tp > tp_prev:
            ap += (tp - tp_prev) / n_pos * (tp / seen)
        i = j + 1
    return ap


def balanced_accuracy(logits, labels) -> float:
    """(sensitivity + specificity) / 2 with predictions = logit > 0."""
    z = np.asarray(logits, dtype=np.float64).ravel()
    y = _check_binary(np.asarray(labels).ravel())
    if z.shape != y.shape:
        raise ValueError("logits and labels must have equal length")
    pred = z > 0
    tpr = float(pred[y == 1].mean())
    tnr = float((~pred)[y == 0].mean())
    return 0.5 * (tpr + tnr)


@dataclass(frozen=True)
class MetricReport:
    """The three per-epoch validation metrics."""

    roc_auc: float
    avg_precision: float
    balanced_acc: float

    @staticmethod
    def compute(logits, labels) -> "MetricReport":
        return MetricReport(
            roc_auc=roc_auc(logits, labels),
            avg_precision=average_precision(logits, labels),
            balanced_acc=balanced_accuracy(logits, labels),
        )

    def as_dict(self) -> dict[str, float]:
        return {
            "roc_auc": self.roc_auc,
            "avg_precision": self.avg_precision,
            "balanced_acc": self.balanced_acc,
        }
