"""Two-stage (trace partitioning, then metric clustering) estimator."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .cluster import cluster_chunks
from .ingest import filter_high_fanout
from .metricprep import PreprocessReport, preprocess
from .model import Chunk, FunctionalCluster, PipelineConfig, ValidationError, sort_ids
from .partition import partition
from .validation import check_destination_sets, check_fitted, check_metric_matrices

MODES = ("full", "traces", "metrics")


@dataclass
class TelemetryDataset:
    """Trace records (or destination sets) plus per-instance metrics."""

    traces: object = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


class FunctionalClusterer(ClusterMixin, BaseEstimator):
    """Discover functional clusters of instances from traces and metrics.

    Parameters
    ----------
    theta_lsh, theta_hac : float
        Jaccard threshold for trace partitioning and the complete-linkage
        cut height.
    n_perm : int
        MinHash signature length.
    fanout_cap : int
        Sources with more distinct destinations are set aside as singletons.
    log_metrics : collection of str or None
        Metrics to log-transform; ``None`` selects names mentioning
        ``bytes`` or ``rate``.
    outlier_window : int
    dtw_window : int or None
        Optional Sakoe-Chiba band half-width.
    mode : {"full", "traces", "metrics"}
        ``"traces"`` stops after partitioning (each chunk is a cluster);
        ``"metrics"`` skips partitioning (one chunk holding everything).
    random_state : int
    n_jobs : int

    Attributes
    ----------
    chunks_, clusters_ : lists of Chunk / FunctionalCluster
    instance_ids_ : ndarray of str
    labels_ : ndarray of int
    removed_ : list of str
        Instances set aside by the fan-out cap.
    missing_metrics_ : list of str
    dendrograms_ : dict of chunk index to Dendrogram
    timings_ : dict of stage name to milliseconds
    """

    def __init__(
        self,
        theta_lsh=0.5,
        theta_hac=0.4,
        n_perm=128,
        fanout_cap=100,
        log_metrics=None,
        outlier_window=10,
        dtw_window=None,
        mode="full",
        random_state=20230901,
        n_jobs=1,
    ):
        self.theta_lsh = theta_lsh
        self.theta_hac = theta_hac
        self.n_perm = n_perm
        self.fanout_cap = fanout_cap
        self.log_metrics = log_metrics
        self.outlier_window = outlier_window
        self.dtw_window = dtw_window
        self.mode = mode
        self.random_state = random_state
        self.n_jobs = n_jobs

    @classmethod
    def from_config(cls, config: PipelineConfig, **kwargs) -> "FunctionalClusterer":
        return cls(
            theta_lsh=config.theta_lsh,
            theta_hac=config.theta_hac,
            n_perm=config.minhash_perms,
            fanout_cap=config.fanout_cap,
            log_metrics=config.log_metrics,
            outlier_window=config.outlier_window,
            dtw_window=config.dtw_window,
            random_state=config.rng_seed,
            **kwargs,
        )

    def get_config(self) -> PipelineConfig:
        return PipelineConfig(
            theta_lsh=self.theta_lsh,
            theta_hac=self.theta_hac,
            minhash_perms=self.n_perm,
            fanout_cap=self.fanout_cap,
            log_metrics=self.log_metrics,
            rng_seed=self.random_state,
            dtw_window=self.dtw_window,
            outlier_window=self.outlier_window,
        )

    def fit(self, X, y=None, chunks=None):
        """Cluster the instances of ``X``.

        ``X`` is a ``TelemetryDataset`` or a ``(traces, metrics)`` pair.
        Passing precomputed ``chunks`` skips the partitioning stage.
        """
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        config = self.get_config()
        traces, metrics = (X.traces, X.metrics) if isinstance(X, TelemetryDataset) else X
        metrics = check_metric_matrices(metrics)
        timings = {}

        t0 = time.perf_counter()
        sets = check_destination_sets(traces)
        for owner in metrics:
            if owner not in sets:
                sets[owner] = check_destination_sets({owner: ()})[owner]
        kept, removed = filter_high_fanout(sets, config.fanout_cap)
        self.removed_ = removed
        if chunks is not None:
            self.chunks_ = list(chunks)
        elif self.mode == "metrics":
            self.chunks_ = [Chunk(tuple(sets))] if sets else []
        else:
            self.chunks_ = partition(kept, config, singletons=removed)
        timings["partition"] = (time.perf_counter() - t0) * 1000

        t0 = time.perf_counter()
        admitted = {m for c in self.chunks_ for m in c.members}
        prepared, report = {}, PreprocessReport()
        if self.mode != "traces":
            for owner in sort_ids(admitted & set(metrics)):
                if metrics[owner].eligible:
                    prepared[owner], rep = preprocess(metrics[owner], config)
                    report.merge(rep)
        self.preprocess_report_ = report
        timings["preprocess"] = (time.perf_counter() - t0) * 1000

        t0 = time.perf_counter()
        if self.mode == "traces":
            self.clusters_ = [FunctionalCluster(n, c.members, n) for n, c in enumerate(self.chunks_)]
            self.dendrograms_ = {}
            self.missing_metrics_ = []
        else:
            result = cluster_chunks(self.chunks_, prepared, config, n_jobs=int(self.n_jobs))
            self.clusters_ = result.clusters
            self.dendrograms_ = result.dendrograms
            self.missing_metrics_ = result.missing_metrics
        timings["cluster"] = (time.perf_counter() - t0) * 1000
        self.timings_ = timings
        self._set_labels(self.clusters_)
        return self

    def _set_labels(self, clusters):
        label_of = {m: c.cluster_id for c in clusters for m in c.members}
        self.instance_ids_ = np.array(sort_ids(label_of), dtype=object)
        self.labels_ = np.array([label_of[i] for i in self.instance_ids_], dtype=np.int64)

    def recut(self, theta_hac: float) -> list[FunctionalCluster]:
        """Clusters at another HAC height, reusing the fitted dendrograms."""
        check_fitted(self, "clusters_")
        if self.mode == "traces":
            return list(self.clusters_)
        out = []
        for chunk_id, chunk in enumerate(self.chunks_):
            dendro = self.dendrograms_.get(chunk_id)
            groups = dendro.cut(theta_hac) if dendro is not None else []
            covered = {m for g in groups for m in g}
            groups = groups + [(m,) for m in chunk.members if m not in covered]
            for g in sorted(groups, key=lambda g: g[0]):
                out.append(FunctionalCluster(len(out), g, chunk_id))
        return out

    def labels_dict(self) -> dict:
        check_fitted(self, "labels_")
        return dict(zip(self.instance_ids_.tolist(), self.labels_.tolist()))
