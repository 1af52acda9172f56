"""Frame-level ROC/AUC evaluation.

The fast path uses the rank statistic with midrank tie handling; AUC equals
the probability that a random positive outranks a random negative, ties
counting one half. `auc_bruteforce` is the independent O(P*N) pairwise
oracle kept for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class RocResult:
    auc: float
    curve: np.ndarray  # (n_points, 2) columns: false positive rate, true positive rate


def _as_scores(scores) -> np.ndarray:
    arr = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    if arr.ndim != 1:
        raise EvalError(f"scores must be 1-D, got shape {arr.shape}")
    return arr


def _as_labels(gt, n: int) -> np.ndarray:
    labels = np.asarray(getattr(gt, "labels", gt), dtype=np.int64)
    if labels.shape != (n,):
        raise EvalError(f"ground truth length {labels.size} != score count {n}")
    if labels.min() == labels.max():
        raise EvalError("ground truth must contain both classes")
    return labels


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the mean rank of the tie group."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, gt) -> RocResult:
    """AUC by rank statistic plus the ROC curve from a threshold sweep."""
    s = _as_scores(scores)
    y = _as_labels(gt, s.size)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = _midranks(s)
    value = (ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    # Threshold sweep over distinct score levels, descending.
    order = np.argsort(-s, kind="mergesort")
    sorted_scores = s[order]
    sorted_pos = (y[order] == 1).astype(np.float64)
    cum_tp = np.cumsum(sorted_pos)
    cum_fp = np.cumsum(1.0 - sorted_pos)
    level_end = np.nonzero(
        np.concatenate([sorted_scores[1:] != sorted_scores[:-1], [True]])
    )[0]
    curve = np.concatenate(
        [[[0.0, 0.0]], np.column_stack([cum_fp[level_end] / n_neg, cum_tp[level_end] / n_pos])]
    )
    return RocResult(auc=float(value), curve=curve)


def auc_bruteforce(scores, gt) -> float:
    """Mean over all (positive, negative) pairs of [s_p > s_n] + 0.5*[s_p == s_n]."""
    s = _as_scores(scores)
    y = _as_labels(gt, s.size)
    pos = s[y == 1]
    neg = s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (pos.size * neg.size))
