"""Reliability analyses run on top of discovered clusters."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import FunctionalCluster, MetricMatrix, ValidationError, sort_ids

# scales MAD to the standard deviation of a normal distribution
MAD_SCALE = 1.4826


@dataclass(frozen=True)
class DeploymentFinding:
    cluster_id: int
    machine_id: str
    severity: str
    fraction: float
    members: tuple

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "machine_id": self.machine_id,
            "severity": self.severity,
            "fraction": self.fraction,
            "members": list(self.members),
        }


def unplaced_members(clusters: Iterable[FunctionalCluster], placement: Mapping[str, str]) -> list[str]:
    return sort_ids(m for c in clusters for m in c.members if m not in placement)


def find_vulnerable(
    clusters: Iterable[FunctionalCluster],
    placement: Mapping[str, str],
    concentration: float = 1.0,
) -> list[DeploymentFinding]:
    """Flag clusters whose placed members pile up on one machine.

    A cluster with at least two placed members is reported when the largest
    share of them on a single machine reaches ``concentration``. All of them
    on one machine is ``"vulnerable"``; anything less is ``"concentrated"``.
    Members with no placement are ignored here; see ``unplaced_members``.
    """
    if not 0.0 < concentration <= 1.0:
        raise ValidationError(f"concentration must lie in (0, 1], got {concentration}")
    findings = []
    for cluster in clusters:
        placed = [m for m in cluster.members if m in placement]
        if len(placed) < 2:
            continue
        counts = Counter(placement[m] for m in placed)
        top = max(counts.values())
        machine = min(mach for mach, n in counts.items() if n == top)
        fraction = top / len(placed)
        if fraction >= concentration:
            severity = "vulnerable" if top == len(placed) else "concentrated"
            on_machine = tuple(m for m in placed if placement[m] == machine)
            findings.append(DeploymentFinding(cluster.cluster_id, machine, severity, fraction, on_machine))
    return findings


@dataclass(frozen=True, eq=False)
class ClusterSeries:
    cluster_id: int
    metric_name: str
    timestamps: np.ndarray
    values: np.ndarray

    def __len__(self):
        return self.values.size


def aggregate_cluster_metric(
    clusters: Iterable[FunctionalCluster],
    metrics: Mapping[str, MetricMatrix],
    metric_name: str,
    how: str = "sum",
) -> tuple[list[ClusterSeries], list[int]]:
    """Per-cluster sum (or mean) of one raw metric on the union time grid.

    Members are interpolated linearly onto the grid, holding their edge
    values outside their own range. Clusters where no member reports the
    metric are returned in the second list.
    """
    if how not in ("sum", "mean"):
        raise ValidationError(f"how must be 'sum' or 'mean', got {how!r}")
    series, skipped = [], []
    for cluster in clusters:
        mats = [
            metrics[m] for m in cluster.members if m in metrics and metric_name in metrics[m].metric_names
        ]
        if not mats:
            skipped.append(cluster.cluster_id)
            continue
        grid = np.unique(np.concatenate([m.timestamps for m in mats]))
        total = np.zeros(grid.size)
        for m in mats:
            total += np.interp(grid, m.timestamps, m.column(metric_name))
        if how == "mean":
            total /= len(mats)
        series.append(ClusterSeries(cluster.cluster_id, metric_name, grid, total))
    return series, skipped


def flag_spikes(series: ClusterSeries | Sequence[float], z: float = 3.0, timestamps=None) -> list[tuple]:
    """Points whose robust z-score ``(v - median) / (1.4826 * MAD)`` exceeds ``z``.

    With a zero MAD every value strictly above the median is flagged (its
    score is reported as infinity).

    Returns:
        ``(timestamp, value, zscore)`` tuples in time order.
    """
    if isinstance(series, ClusterSeries):
        values, ts = series.values, series.timestamps
    else:
        values = np.asarray(series, dtype=float)
        ts = np.arange(values.size) if timestamps is None else np.asarray(timestamps)
    if values.size < 10:
        raise ValidationError(f"spike detection needs at least 10 points, got {values.size}")
    median = np.median(values)
    mad = np.median(np.abs(values - median))
    if mad == 0:
        return [(int(t), float(v), float("inf")) for t, v in zip(ts, values) if v > median]
    scores = (values - median) / (MAD_SCALE * mad)
    return [(int(t), float(v), float(s)) for t, v, s in zip(ts, values, scores) if s > z]
