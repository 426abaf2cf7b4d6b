"""Input validation helpers used by the estimators."""

from __future__ import annotations

from collections.abc import Iterable, Mapping

import numpy as np
from sklearn.exceptions import NotFittedError

from .ingest import build_destination_sets
from .model import DestinationSet, MetricMatrix, TraceRecord, ValidationError


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet. Call 'fit' first."
        )


def check_series(series, name: str = "series") -> np.ndarray:
    """Coerce to a finite, non-empty 1-D float array."""
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or infinite values")
    return arr


def check_destination_sets(X) -> dict[str, DestinationSet]:
    """Accept destination sets in the shapes callers tend to have.

    ``X`` may be a mapping of id to ``DestinationSet`` or to an iterable of
    destination ids, or an iterable of ``TraceRecord``.
    """
    if isinstance(X, Mapping):
        out = {}
        for owner, dests in X.items():
            if isinstance(dests, DestinationSet):
                if dests.owner != owner:
                    raise ValidationError(f"key {owner!r} holds the set of {dests.owner!r}")
                out[owner] = dests
            else:
                if isinstance(dests, str):
                    raise ValidationError(f"destinations of {owner!r} must be a collection, not a string")
                out[owner] = DestinationSet(owner, frozenset(d for d in dests if d != owner))
        return out
    if isinstance(X, Iterable):
        records = list(X)
        if records and not all(isinstance(r, TraceRecord) for r in records):
            raise ValidationError("expected a mapping of destination sets or TraceRecord objects")
        return build_destination_sets(records)
    raise ValidationError(f"cannot interpret {type(X).__name__} as destination sets")


def as_metric_matrix(obj, owner: str | None = None) -> MetricMatrix:
    if isinstance(obj, MetricMatrix):
        return obj
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D (timestamps x metrics) array, got shape {arr.shape}")
    names = tuple(f"m{i}" for i in range(arr.shape[1]))
    return MetricMatrix(owner or "x", names, arr, np.arange(arr.shape[0]))


def check_metric_matrices(X) -> dict[str, MetricMatrix]:
    """Normalise ``X`` to an id -> ``MetricMatrix`` dict.

    Arrays without ids (a sequence, or a 3-D array) get positional ids
    ``"0", "1", ...``.
    """
    if isinstance(X, Mapping):
        out = {}
        for owner, m in X.items():
            m = as_metric_matrix(m, owner)
            if m.owner != owner:
                raise ValidationError(f"key {owner!r} holds the matrix of {m.owner!r}")
            out[owner] = m
        return out
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    if isinstance(X, Iterable):
        items = list(X)
        if all(isinstance(m, MetricMatrix) for m in items):
            out = {m.owner: m for m in items}
            if len(out) != len(items):
                raise ValidationError("duplicate owners among metric matrices")
            return out
        width = len(str(max(len(items) - 1, 0)))
        return {f"{i:0{width}d}": as_metric_matrix(m, f"{i:0{width}d}") for i, m in enumerate(items)}
    raise ValidationError(f"cannot interpret {type(X).__name__} as metric matrices")
