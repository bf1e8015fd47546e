"""Clustering accuracy (optimal one-to-one matching) and normalized mutual information."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, UsageError


def _pad_square(cost: np.ndarray) -> np.ndarray:
    n = max(cost.shape)
    out = np.zeros((n, n), dtype=np.float64)
    out[: cost.shape[0], : cost.shape[1]] = cost
    return out


def hungarian(cost) -> tuple:
    """Minimum-cost perfect assignment.

    Rectangular matrices are zero-padded to square. Among optimal
    assignments the lexicographically smallest one is returned: rows are
    fixed in order, each to the lowest column that keeps the optimum
    reachable. Returns ``(assignment, total)`` with ``assignment[i]`` the
    column of row ``i``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise UsageError(f"cost must be a non-empty 2-D matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise UsageError("cost matrix has non-finite entries")
    cost = _pad_square(cost)
    n = cost.shape[0]
    rows, cols = linear_sum_assignment(cost)
    best = cost[rows, cols].sum()
    tol = 1e-9 * max(1.0, np.abs(cost).sum())

    assignment = np.full(n, -1, dtype=int)
    free_rows, free_cols = list(range(n)), list(range(n))
    fixed = 0.0
    for i in range(n):
        free_rows.remove(i)
        for j in sorted(free_cols):
            rest_cols = [c for c in free_cols if c != j]
            rest = 0.0
            if free_rows:
                sub = cost[np.ix_(free_rows, rest_cols)]
                r, c = linear_sum_assignment(sub)
                rest = sub[r, c].sum()
            if fixed + cost[i, j] + rest <= best + tol:
                assignment[i] = j
                fixed += cost[i, j]
                free_cols.remove(j)
                break
    return assignment, float(cost[np.arange(n), assignment].sum())


def _check_pair(predicted, truth):
    predicted = np.asarray(predicted, dtype=int).ravel()
    truth = np.asarray(truth, dtype=int).ravel()
    if predicted.size == 0 or truth.size == 0:
        raise UsageError("label arrays must be non-empty")
    if predicted.shape != truth.shape:
        raise UsageError(f"label arrays differ in length: {predicted.size} vs {truth.size}")
    if predicted.min() < 0 or truth.min() < 0:
        raise UsageError("labels must be non-negative integers")
    return predicted, truth


def contingency(predicted, truth) -> np.ndarray:
    """Counts[i, j] = #samples in predicted cluster i with true class j."""
    predicted, truth = _check_pair(predicted, truth)
    table = np.zeros((predicted.max() + 1, truth.max() + 1), dtype=np.int64)
    np.add.at(table, (predicted, truth), 1)
    return table


def clustering_accuracy(predicted, truth) -> float:
    """Fraction of samples correct under the best one-to-one cluster-to-class map."""
    counts = contingency(predicted, truth)
    assignment, _ = hungarian(-_pad_square(counts))
    padded = _pad_square(counts)
    matched = padded[np.arange(len(assignment)), assignment].sum()
    return float(matched / counts.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(predicted, truth, normalization: str = "arithmetic") -> float:
    """Normalized mutual information with natural-log entropies.

    ``arithmetic``: 2 I / (H(U) + H(V)); ``sqrt``: I / sqrt(H(U) H(V)).
    Two single-cluster partitions score 1.
    """
    table = contingency(predicted, truth).astype(np.float64)
    n = table.sum()
    h_pred = _entropy(table.sum(axis=1))
    h_true = _entropy(table.sum(axis=0))
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    joint = table / n
    outer = np.outer(joint.sum(axis=1), joint.sum(axis=0))
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    if normalization == "arithmetic":
        denom = 0.5 * (h_pred + h_true)
    elif normalization == "sqrt":
        denom = np.sqrt(h_pred * h_true)
    else:
        raise ConfigError(f"unknown NMI normalization {normalization!r}")
    if denom == 0.0:
        return 0.0
    return float(min(max(mi / denom, 0.0), 1.0))
