"""Core value types shared by every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_LOG_METRIC_KEYS = ("bytes", "rate")


class FunclustError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(FunclustError, ValueError):
    """Input data or configuration violates a documented contract."""


def check_instance_id(value: str) -> str:
    if not isinstance(value, str) or not value:
        raise ValidationError(f"instance id must be a non-empty string, got {value!r}")
    if "\n" in value or "\r" in value or "," in value:
        raise ValidationError(f"instance id {value!r} contains a newline or comma")
    return value


def sort_ids(ids: Iterable[str]) -> list[str]:
    """Deterministic total order on instance ids (UTF-8 byte order)."""
    # str comparison on code points agrees with UTF-8 byte order
    return sorted(ids)


@dataclass(frozen=True)
class TraceRecord:
    src: str
    dst: str
    timestamp: int

    def __post_init__(self):
        check_instance_id(self.src)
        check_instance_id(self.dst)
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, (int, np.integer)):
            raise ValidationError(f"timestamp must be an integer, got {self.timestamp!r}")
        if self.timestamp < 0:
            raise ValidationError(f"timestamp must be >= 0, got {self.timestamp}")

    @property
    def is_self_loop(self) -> bool:
        return self.src == self.dst


@dataclass(frozen=True)
class DestinationSet:
    owner: str
    destinations: frozenset

    def __post_init__(self):
        check_instance_id(self.owner)
        dests = frozenset(self.destinations)
        if self.owner in dests:
            raise ValidationError(f"{self.owner!r} listed in its own destination set")
        object.__setattr__(self, "destinations", dests)

    def __len__(self):
        return len(self.destinations)


@dataclass(frozen=True, eq=False)
class MetricMatrix:
    """Multivariate time series of one instance.

    ``values`` has one row per timestamp and one column per metric. The
    arrays are stored read-only so a matrix can be shared between workers.
    """

    owner: str
    metric_names: tuple
    values: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        check_instance_id(self.owner)
        names = tuple(self.metric_names)
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate metric names for {self.owner!r}: {names}")
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise ValidationError("metric values must be a 2-D grid")
        timestamps = np.array(self.timestamps, dtype=np.int64, copy=True).reshape(-1)
        if values.shape != (timestamps.size, len(names)):
            raise ValidationError(
                f"{self.owner!r}: values shape {values.shape} does not match "
                f"{timestamps.size} timestamps x {len(names)} metrics"
            )
        if timestamps.size > 1 and np.any(np.diff(timestamps) <= 0):
            raise ValidationError(f"{self.owner!r}: timestamps must be strictly increasing")
        values.setflags(write=False)
        timestamps.setflags(write=False)
        object.__setattr__(self, "metric_names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", timestamps)

    @property
    def n_timestamps(self) -> int:
        return self.values.shape[0]

    @property
    def n_metrics(self) -> int:
        return self.values.shape[1]

    @property
    def eligible(self) -> bool:
        """Whether the matrix can take part in metric clustering."""
        return self.n_timestamps >= 2 and self.n_metrics >= 1 and bool(np.all(np.isfinite(self.values)))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.metric_names.index(name)]

    def select(self, names: Sequence[str]) -> "MetricMatrix":
        idx = [self.metric_names.index(n) for n in names]
        return MetricMatrix(self.owner, tuple(names), self.values[:, idx], self.timestamps)

    def __eq__(self, other):
        if not isinstance(other, MetricMatrix):
            return NotImplemented
        return (
            self.owner == other.owner
            and self.metric_names == other.metric_names
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class Chunk:
    members: tuple

    def __post_init__(self):
        members = tuple(sort_ids(set(self.members)))
        if not members:
            raise ValidationError("a chunk must have at least one member")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class FunctionalCluster:
    cluster_id: int
    members: tuple
    parent_chunk: int

    def __post_init__(self):
        members = tuple(sort_ids(set(self.members)))
        if not members:
            raise ValidationError("a cluster must have at least one member")
        if self.cluster_id < 0:
            raise ValidationError("cluster_id must be >= 0")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class PipelineConfig:
    theta_lsh: float = 0.5
    theta_hac: float = 0.4
    minhash_perms: int = 128
    fanout_cap: int = 100
    log_metrics: frozenset | None = None
    rng_seed: int = 20230901
    dtw_window: int | None = None
    outlier_window: int = 10

    def __post_init__(self):
        for name in ("theta_lsh", "theta_hac"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)
        if int(self.minhash_perms) < 16:
            raise ValidationError(f"minhash_perms must be >= 16, got {self.minhash_perms}")
        if int(self.fanout_cap) < 1:
            raise ValidationError(f"fanout_cap must be >= 1, got {self.fanout_cap}")
        if self.dtw_window is not None and int(self.dtw_window) < 0:
            raise ValidationError("dtw_window must be non-negative")
        if int(self.outlier_window) < 1:
            raise ValidationError("outlier_window must be >= 1")
        if not -(2**63) <= int(self.rng_seed) < 2**64:
            raise ValidationError("rng_seed must fit in 64 bits")
        if self.log_metrics is not None:
            object.__setattr__(self, "log_metrics", frozenset(self.log_metrics))

    def wants_log(self, metric_name: str) -> bool:
        """Whether ``metric_name`` is log-transformed before scaling.

        With no explicit ``log_metrics`` set, metrics whose name mentions
        ``bytes`` or ``rate`` are treated as heavy-tailed I/O counters.
        """
        if self.log_metrics is not None:
            return metric_name in self.log_metrics
        lowered = metric_name.lower()
        return any(key in lowered for key in DEFAULT_LOG_METRIC_KEYS)


@dataclass
class ValidationReport:
    traces_without_metrics: list = field(default_factory=list)
    metrics_without_traces: list = field(default_factory=list)
    malformed: list = field(default_factory=list)
    self_loops: int = 0

    @property
    def findings(self) -> int:
        return len(self.traces_without_metrics) + len(self.metrics_without_traces) + len(self.malformed)

    def __bool__(self):
        return self.findings > 0

    def to_dict(self) -> dict:
        return {
            "traces_without_metrics": list(self.traces_without_metrics),
            "metrics_without_traces": list(self.metrics_without_traces),
            "malformed": list(self.malformed),
            "self_loops": self.self_loops,
        }


def validate_dataset(records: Iterable[TraceRecord], metrics: Mapping[str, MetricMatrix]) -> ValidationReport:
    """Cross-check trace and metric coverage without touching the inputs."""
    report = ValidationReport()
    seen = set()
    for rec in records:
        if rec.is_self_loop:
            report.self_loops += 1
        seen.add(rec.src)
        seen.add(rec.dst)
    for owner, matrix in metrics.items():
        if not isinstance(matrix, MetricMatrix) or matrix.owner != owner:
            report.malformed.append(owner)
        elif not matrix.eligible:
            report.malformed.append(owner)
    report.traces_without_metrics = sort_ids(seen - set(metrics))
    report.metrics_without_traces = sort_ids(set(metrics) - seen)
    report.malformed = sort_ids(report.malformed)
    return report
