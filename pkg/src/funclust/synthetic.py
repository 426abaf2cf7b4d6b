"""Seeded generator of labelled telemetry with planted functional clusters.

Each cluster talks to a destination profile (private endpoints plus a few
shared services such as gateways) and follows a parametric usage shape per
metric. Instances jitter the shape in time and add noise; with probability
``trace_noise`` an instance also talks to one endpoint belonging to another
cluster's profile.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .ingest import write_metrics, write_traces
from .model import MetricMatrix, TraceRecord, ValidationError, sort_ids

SHAPE_FAMILIES = ("sine", "square", "ramp", "bursts", "dips", "rise", "fall")


@dataclass(frozen=True)
class SyntheticSpec:
    num_clusters: int = 20
    instances_per_cluster: tuple = (8, 12)
    private_destinations: int = 18
    shared_service_count: int = 2
    trace_noise: float = 0.05
    trace_repeats: int = 3
    clusters_per_trace_profile: int = 1
    clusters_per_metric_shape: int = 1
    shape_families: tuple = SHAPE_FAMILIES[:5]
    metric_names: tuple = ("cpu_util", "net_in_bytes_rate", "net_out_bytes_rate", "disk_write_bytes_rate")
    series_length: int = 96
    interval: int = 300
    start_time: int = 1_700_000_000
    noise_sigma: float = 0.03
    phase_jitter: int = 2
    num_machines: int | None = None
    colocated_fraction: float = 0.1
    rng_seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "instances_per_cluster", tuple(self.instances_per_cluster))
        object.__setattr__(self, "shape_families", tuple(self.shape_families))
        object.__setattr__(self, "metric_names", tuple(self.metric_names))
        if self.num_clusters < 1:
            raise ValidationError("num_clusters must be >= 1")
        lo, hi = self.instances_per_cluster
        if not 1 <= lo <= hi:
            raise ValidationError(f"bad instances_per_cluster range {self.instances_per_cluster}")
        if self.private_destinations < 1 or self.shared_service_count < 0:
            raise ValidationError("destination counts must be positive")
        for name in ("trace_noise", "colocated_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.trace_repeats < 1 or self.series_length < 2 or self.interval < 1:
            raise ValidationError("trace_repeats, series_length and interval must be positive")
        if self.clusters_per_trace_profile < 1 or self.clusters_per_metric_shape < 1:
            raise ValidationError("clusters per profile/shape must be >= 1")
        unknown = set(self.shape_families) - set(SHAPE_FAMILIES)
        if unknown or not self.shape_families:
            raise ValidationError(f"unknown shape families {sorted(unknown)}")
        if not self.metric_names:
            raise ValidationError("at least one metric is required")
        if self.noise_sigma < 0 or self.phase_jitter < 0:
            raise ValidationError("noise_sigma and phase_jitter must be non-negative")
        if self.num_machines is not None and self.num_machines < 2:
            raise ValidationError("num_machines must be >= 2")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValidationError(f"unknown synthetic spec keys: {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out


@dataclass
class SyntheticDataset:
    records: list
    metrics: dict
    truth: dict
    placement: dict
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)

    def write(self, out_dir: str) -> dict:
        """Write ``traces.csv``, ``metrics.csv``, ``truth.csv`` and ``placement.csv``."""
        os.makedirs(out_dir, exist_ok=True)
        paths = {name: os.path.join(out_dir, f"{name}.csv") for name in ("traces", "metrics", "truth", "placement")}
        with open(paths["traces"], "w", newline="", encoding="utf-8") as fh:
            write_traces(self.records, fh)
        with open(paths["metrics"], "w", newline="", encoding="utf-8") as fh:
            write_metrics((self.metrics[k] for k in sort_ids(self.metrics)), fh)
        write_labels(self.truth, paths["truth"], ("instance_id", "label"))
        write_labels(self.placement, paths["placement"], ("instance_id", "machine_id"))
        return paths


def write_labels(mapping: dict, path: str, header: tuple) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for key in sort_ids(mapping):
            writer.writerow((key, mapping[key]))


def _shape(family: str, n: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n, dtype=float)
    if family == "sine":
        period = rng.uniform(n / 6, n / 2)
        return 0.5 + 0.5 * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    if family == "square":
        period = rng.uniform(n / 6, n / 2)
        duty = rng.uniform(0.3, 0.7)
        return (((t + rng.uniform(0, period)) % period) < duty * period).astype(float)
    if family == "ramp":
        period = rng.uniform(n / 4, n / 1.5)
        return ((t + rng.uniform(0, period)) % period) / period
    if family in ("rise", "fall"):
        step = 1.0 / (1.0 + np.exp(-(t - rng.uniform(0.35, 0.65) * n) / rng.uniform(1.0, 3.0)))
        return step if family == "rise" else 1.0 - step
    # bursts / dips: roughly a fifth of the points sit at the other level,
    # enough that three-sigma repair leaves them alone
    base = np.zeros(n)
    target = max(2, int(round(0.2 * n)))
    while base.sum() < target:
        width = int(rng.integers(2, max(3, n // 16) + 1))
        start = int(rng.integers(0, max(1, n - width)))
        base[start:start + width] = 1.0
    return base if family == "bursts" else 1.0 - base


def _to_raw(name: str, shape: np.ndarray) -> np.ndarray:
    lowered = name.lower()
    if "bytes" in lowered or "rate" in lowered:
        # exp(a + b*s) - 1, so ln(1 + raw) is linear in the shape again
        return np.expm1(math.log(1e3) + math.log(1e3) * shape)
    return 5.0 + 90.0 * shape


def generate(spec: SyntheticSpec | None = None) -> SyntheticDataset:
    """Draw a dataset; identical specs give identical datasets."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.rng_seed)
    C = spec.num_clusters
    lo, hi = spec.instances_per_cluster
    sizes = rng.integers(lo, hi + 1, size=C)
    total = int(sizes.sum())
    width = max(5, len(str(total)))
    ids = [f"inst-{i:0{width}d}" for i in rng.permutation(total)]
    cluster_of = np.repeat(np.arange(C), sizes)
    label_width = max(2, len(str(C - 1)))
    truth = {ids[i]: f"fc-{cluster_of[i]:0{label_width}d}" for i in range(total)}

    n_profiles = math.ceil(C / spec.clusters_per_trace_profile)
    shared = [f"gw-{k:02d}" for k in range(spec.shared_service_count)]
    profiles = [
        [f"svc-{p:04d}-{k:02d}" for k in range(spec.private_destinations)] + shared for p in range(n_profiles)
    ]
    foreign_pool = [
        [d for q, prof in enumerate(profiles) if q != p for d in prof[: spec.private_destinations]]
        for p in range(n_profiles)
    ]

    n_shapes = math.ceil(C / spec.clusters_per_metric_shape)
    shapes = [
        [
            _shape(spec.shape_families[(s + u) % len(spec.shape_families)], spec.series_length, rng)
            for u in range(len(spec.metric_names))
        ]
        for s in range(n_shapes)
    ]

    span = spec.series_length * spec.interval
    records = []
    metrics = {}
    timestamps = spec.start_time + spec.interval * np.arange(spec.series_length, dtype=np.int64)
    for i in range(total):
        c = int(cluster_of[i])
        profile = profiles[c // spec.clusters_per_trace_profile]
        dests = set(profile)
        if rng.random() < spec.trace_noise:
            foreign = foreign_pool[c // spec.clusters_per_trace_profile]
            if foreign:
                dests.add(foreign[int(rng.integers(len(foreign)))])
        for d in sorted(dests):
            for ts in np.sort(rng.integers(0, span, size=spec.trace_repeats)):
                records.append(TraceRecord(ids[i], d, int(spec.start_time + ts)))

        shape_set = shapes[c % n_shapes]
        shift = int(rng.integers(-spec.phase_jitter, spec.phase_jitter + 1)) if spec.phase_jitter else 0
        cols = []
        for name, base in zip(spec.metric_names, shape_set):
            noisy = np.roll(base, shift) + rng.normal(0.0, spec.noise_sigma, size=base.size)
            cols.append(_to_raw(name, noisy))
        metrics[ids[i]] = MetricMatrix(ids[i], spec.metric_names, np.column_stack(cols), timestamps)

    records.sort(key=lambda r: (r.timestamp, r.src, r.dst))
    placement = _place(spec, ids, cluster_of, rng)
    return SyntheticDataset(records, metrics, truth, placement, spec)


def _place(spec: SyntheticSpec, ids: list, cluster_of: np.ndarray, rng: np.random.Generator) -> dict:
    C = spec.num_clusters
    n_machines = spec.num_machines or max(2, len(ids) // 4)
    machines = [f"pm-{m:04d}" for m in range(n_machines)]
    n_coloc = int(round(spec.colocated_fraction * C))
    colocated = set(rng.choice(C, size=n_coloc, replace=False).tolist()) if n_coloc else set()
    placement = {}
    for c in range(C):
        members = [ids[i] for i in np.flatnonzero(cluster_of == c)]
        offset = int(rng.integers(n_machines))
        for k, inst in enumerate(members):
            step = 0 if c in colocated else k
            placement[inst] = machines[(offset + step) % n_machines]
    return placement


def load_spec(path: str) -> SyntheticSpec:
    with open(path, encoding="utf-8") as fh:
        return SyntheticSpec.from_dict(json.load(fh))
