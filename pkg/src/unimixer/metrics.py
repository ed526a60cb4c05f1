"""Ranking metrics: AUC via the rank statistic, and its per-group mean."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, UndefinedMetricError

__all__ = ["auc", "uauc"]


def _tie_averaged_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks; tied scores share the mean of their rank range."""
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    n = len(s)
    new_group = np.empty(n, dtype=bool)
    new_group[0] = True
    new_group[1:] = s[1:] != s[:-1]
    group_id = np.cumsum(new_group) - 1
    starts = np.flatnonzero(new_group)
    counts = np.diff(np.append(starts, n))
    group_avg = starts + (counts + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = group_avg[group_id]
    return ranks


def auc(scores, labels) -> float:
    """Probability a positive outranks a negative; ties count 1/2.

    Computed as the Mann-Whitney rank statistic with tie-averaged ranks,
    which is exactly equivalent to pair counting with half-credit ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError(
            f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors"
        )
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC undefined: {n_pos} positives, {n_neg} negatives"
        )
    ranks = _tie_averaged_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def uauc(scores, labels, groups, return_detail: bool = False):
    """Unweighted mean of per-group AUC over groups holding both classes.

    Groups lacking both classes are skipped; their count is available via
    ``return_detail``. Raises if no group is valid.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if not (scores.shape == labels.shape == groups.shape):
        raise DimensionError("scores, labels and groups must be equal-length")
    values = []
    skipped = 0
    for g in np.unique(groups):
        idx = groups == g
        sub_labels = labels[idx]
        if (sub_labels == 1).any() and (sub_labels != 1).any():
            values.append(auc(scores[idx], sub_labels))
        else:
            skipped += 1
    if not values:
        raise UndefinedMetricError("UAUC undefined: no group holds both classes")
    value = float(np.mean(values))
    if return_detail:
        return value, len(values), skipped
    return value
