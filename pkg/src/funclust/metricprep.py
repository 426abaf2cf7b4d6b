"""Cleaning and scaling of per-instance metric series.

Each column goes through three steps in order: three-sigma outlier repair,
an optional ``ln(1 + v)`` transform for heavy-tailed counters, and min-max
scaling to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .model import MetricMatrix, PipelineConfig, ValidationError
from .validation import check_metric_matrices, check_series


def _repair(x: np.ndarray, window: int) -> tuple[np.ndarray, int]:
    mean = x.mean()
    std = x.std()
    if std == 0:
        return x.copy(), 0
    outliers = np.abs(x - mean) > 3.0 * std
    n_out = int(outliers.sum())
    if n_out == 0:
        return x.copy(), 0
    good = np.flatnonzero(~outliers)
    repaired = x.copy()
    for pos in np.flatnonzero(outliers):
        # nearest by index distance, earlier index first on ties
        order = np.lexsort((good, np.abs(good - pos)))
        repaired[pos] = x[good[order[:window]]].mean()
    return repaired, n_out


def replace_outliers(series, window: int = 10) -> np.ndarray:
    """Replace points outside ``mean +/- 3 * std`` with the mean of the
    ``window`` nearest non-outlier points.

    Statistics use the whole original series (population std) and are
    computed once. Points inside the band are returned untouched.
    """
    x = check_series(series)
    if x.size < 2:
        raise ValidationError("outlier repair needs at least two points")
    if window < 1:
        raise ValidationError("window must be >= 1")
    return _repair(x, window)[0]


def log_transform(series) -> np.ndarray:
    """``ln(1 + max(v, 0))`` elementwise."""
    x = np.asarray(series, dtype=float)
    return np.log1p(np.maximum(x, 0.0))


def minmax_normalize(series) -> np.ndarray:
    """Scale to [0, 1]; a constant series maps to zeros."""
    x = check_series(series)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


@dataclass(frozen=True)
class ColumnReport:
    outliers_replaced: int
    constant_series: bool
    log_applied: bool


@dataclass
class PreprocessReport:
    columns: dict = field(default_factory=dict)

    def add(self, instance: str, metric: str, col: ColumnReport) -> None:
        self.columns[(instance, metric)] = col

    def merge(self, other: "PreprocessReport") -> None:
        self.columns.update(other.columns)

    @property
    def total_outliers(self) -> int:
        return sum(c.outliers_replaced for c in self.columns.values())

    def to_dict(self) -> list[dict]:
        return [
            {
                "instance_id": inst,
                "metric_name": metric,
                "outliers_replaced": c.outliers_replaced,
                "constant_series": c.constant_series,
                "log_applied": c.log_applied,
            }
            for (inst, metric), c in sorted(self.columns.items())
        ]


def preprocess(matrix: MetricMatrix, config: PipelineConfig | None = None) -> tuple[MetricMatrix, PreprocessReport]:
    config = config or PipelineConfig()
    report = PreprocessReport()
    if matrix.n_timestamps < 2:
        raise ValidationError(f"{matrix.owner!r} has fewer than two timestamps")
    out = np.empty_like(matrix.values)
    for col, name in enumerate(matrix.metric_names):
        y, n_out = _repair(check_series(matrix.values[:, col], f"{matrix.owner}/{name}"), config.outlier_window)
        use_log = config.wants_log(name)
        if use_log:
            y = log_transform(y)
        constant = bool(y.max() == y.min())
        out[:, col] = minmax_normalize(y)
        report.add(matrix.owner, name, ColumnReport(n_out, constant, use_log))
    return MetricMatrix(matrix.owner, matrix.metric_names, out, matrix.timestamps), report


class MetricPreprocessor(TransformerMixin, BaseEstimator):
    """Stateless transformer applying :func:`preprocess` to every matrix.

    ``transform`` takes a mapping (or sequence) of metric matrices and
    returns a dict of cleaned matrices; the per-column report of the last
    call is kept in ``report_``.
    """

    def __init__(self, log_metrics=None, outlier_window=10):
        self.log_metrics = log_metrics
        self.outlier_window = outlier_window

    def _config(self) -> PipelineConfig:
        return PipelineConfig(
            log_metrics=None if self.log_metrics is None else frozenset(self.log_metrics),
            outlier_window=self.outlier_window,
        )

    def fit(self, X, y=None):
        self._config()
        check_metric_matrices(X)
        return self

    def transform(self, X):
        config = self._config()
        report = PreprocessReport()
        out = {}
        for owner, m in check_metric_matrices(X).items():
            out[owner], rep = preprocess(m, config)
            report.merge(rep)
        self.report_ = report
        return out
