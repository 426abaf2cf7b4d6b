"""Entropy-based external clustering scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .model import ValidationError, sort_ids


@dataclass(frozen=True)
class LabelAssignment:
    """Ground-truth and predicted labels keyed by instance id.

    Only ids present in both mappings are scored.
    """

    truth: Mapping
    predicted: Mapping

    def aligned(self) -> tuple[np.ndarray, np.ndarray]:
        common = sort_ids(set(self.truth) & set(self.predicted))
        if not common:
            raise ValidationError("truth and prediction share no instance ids")
        t = np.unique([str(self.truth[i]) for i in common], return_inverse=True)[1]
        p = np.unique([str(self.predicted[i]) for i in common], return_inverse=True)[1]
        return t.reshape(-1), p.reshape(-1)


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0]
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(-np.sum(p * np.log(p)))


def _conditional_entropy(target: np.ndarray, given: np.ndarray) -> float:
    """H(target | given) in nats."""
    n = target.size
    table = np.zeros((given.max() + 1, target.max() + 1))
    np.add.at(table, (given, target), 1)
    total = 0.0
    for row in table:
        size = row.sum()
        if size:
            total += size / n * _entropy(row)
    return total


def _scores(assign: LabelAssignment) -> tuple[float, float]:
    truth, pred = assign.aligned()
    h_truth = _entropy(np.bincount(truth).astype(float))
    h_pred = _entropy(np.bincount(pred).astype(float))
    homo = 1.0 if h_truth == 0 else 1.0 - _conditional_entropy(truth, pred) / h_truth
    comp = 1.0 if h_pred == 0 else 1.0 - _conditional_entropy(pred, truth) / h_pred
    return min(max(homo, 0.0), 1.0), min(max(comp, 0.0), 1.0)


def homogeneity(assign: LabelAssignment) -> float:
    """``1 - H(truth | pred) / H(truth)``; 1 when the truth has one label."""
    return _scores(assign)[0]


def completeness(assign: LabelAssignment) -> float:
    """``1 - H(pred | truth) / H(pred)``; 1 when there is one predicted cluster."""
    return _scores(assign)[1]


def v_measure(assign: LabelAssignment) -> float:
    h, c = _scores(assign)
    if h + c == 0:
        return 0.0
    return 2.0 * h * c / (h + c)


def score_all(assign: LabelAssignment) -> dict:
    h, c = _scores(assign)
    v = 0.0 if h + c == 0 else 2.0 * h * c / (h + c)
    return {"homogeneity": h, "completeness": c, "v_measure": v}


def labels_from_clusters(clusters) -> dict:
    return {m: c.cluster_id for c in clusters for m in c.members}
