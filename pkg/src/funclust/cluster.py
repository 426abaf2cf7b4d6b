"""Metric-based clustering inside each chunk.

Two instances are compared metric by metric with dynamic time warping; the
per-metric distances are combined with weights proportional to the mean
standard deviation of that metric across the pair, so flat metrics count
for little. Complete-linkage agglomerative clustering then merges
instances until the closest pair of clusters is farther apart than
``theta_hac``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClusterMixin

from .model import Chunk, FunctionalCluster, MetricMatrix, PipelineConfig, ValidationError, sort_ids
from .validation import check_metric_matrices, check_series

logger = logging.getLogger(__name__)


@njit(cache=True, nogil=True)
def _dtw_core(a, b, window):
    n = a.shape[0]
    m = b.shape[0]
    if window < 0:
        band = max(n, m)
    else:
        band = max(window, abs(n - m))
    inf = np.inf
    prev_c = np.full(m, inf)
    prev_l = np.zeros(m, dtype=np.int64)
    cur_c = np.full(m, inf)
    cur_l = np.zeros(m, dtype=np.int64)
    for i in range(n):
        lo = max(0, i - band)
        hi = min(m, i + band + 1)
        for j in range(m):
            cur_c[j] = inf
            cur_l[j] = 0
        for j in range(lo, hi):
            c = abs(a[i] - b[j])
            if i == 0 and j == 0:
                cur_c[j] = c
                cur_l[j] = 1
                continue
            best_c = inf
            best_l = 0
            # predecessors: diagonal, vertical, horizontal; keep the
            # lexicographic minimum of (cost, path length)
            if i > 0 and j > 0:
                cc = prev_c[j - 1] + c
                ll = prev_l[j - 1] + 1
                if cc < best_c or (cc == best_c and ll < best_l):
                    best_c = cc
                    best_l = ll
            if i > 0:
                cc = prev_c[j] + c
                ll = prev_l[j] + 1
                if cc < best_c or (cc == best_c and ll < best_l):
                    best_c = cc
                    best_l = ll
            if j > 0:
                cc = cur_c[j - 1] + c
                ll = cur_l[j - 1] + 1
                if cc < best_c or (cc == best_c and ll < best_l):
                    best_c = cc
                    best_l = ll
            cur_c[j] = best_c
            cur_l[j] = best_l
        prev_c, cur_c = cur_c, prev_c
        prev_l, cur_l = cur_l, prev_l
    return prev_c[m - 1], prev_l[m - 1]


@njit(cache=True, nogil=True)
def _pairwise_column_dtw(values, lengths, left, right, window):
    """DTW of every metric column for each requested pair.

    ``values`` is (instances, max_len, metrics), padded past ``lengths``.
    """
    n_pairs = left.shape[0]
    k = values.shape[2]
    out = np.empty((n_pairs, k))
    for p in range(n_pairs):
        i = left[p]
        j = right[p]
        for u in range(k):
            a = np.ascontiguousarray(values[i, : lengths[i], u])
            b = np.ascontiguousarray(values[j, : lengths[j], u])
            cost, steps = _dtw_core(a, b, window)
            out[p, u] = cost / steps
    return out


def _window_arg(window) -> int:
    return -1 if window is None else int(window)


def dtw(a, b, window: int | None = None) -> float:
    """Path-length normalised DTW with L1 local cost.

    The warping path runs from the first to the last sample of both series
    and steps diagonally, vertically or horizontally. Among the paths of
    minimal accumulated cost the shortest one is taken, and the result is
    that cost divided by its number of steps, so series in [0, 1] give a
    distance in [0, 1].
    """
    x = check_series(a, "a")
    y = check_series(b, "b")
    cost, steps = _dtw_core(x, y, _window_arg(window))
    return float(cost / steps)


def dtw_path_cost(a, b, window: int | None = None) -> tuple[float, int]:
    """Unnormalised ``(accumulated cost, path steps)`` of the chosen path."""
    cost, steps = _dtw_core(check_series(a, "a"), check_series(b, "b"), _window_arg(window))
    return float(cost), int(steps)


@dataclass(frozen=True)
class MetricWeights:
    owners: tuple
    metric_names: tuple
    weights: np.ndarray


def _normalize_weights(raw: np.ndarray) -> np.ndarray:
    """Row-wise ``raw / raw.sum()``; all-zero rows become uniform."""
    raw = np.atleast_2d(raw)
    totals = raw.sum(axis=1, keepdims=True)
    k = raw.shape[1]
    safe = np.where(totals > 0, totals, 1.0)
    return np.where(totals > 0, raw / safe, 1.0 / k)


def _combine(weights: np.ndarray, dists: np.ndarray) -> np.ndarray:
    return np.sum(np.atleast_2d(weights) * np.atleast_2d(dists), axis=1)


def _check_aligned(mi: MetricMatrix, mj: MetricMatrix) -> None:
    if mi.metric_names != mj.metric_names:
        raise ValidationError(
            f"metric names differ between {mi.owner!r} {mi.metric_names} and {mj.owner!r} {mj.metric_names}"
        )


def metric_weights(mi: MetricMatrix, mj: MetricMatrix) -> MetricWeights:
    """Per-metric weight: mean of the two population standard deviations,
    normalised to sum to one (uniform when every metric is flat in both)."""
    _check_aligned(mi, mj)
    raw = 0.5 * (mi.values.std(axis=0) + mj.values.std(axis=0))
    w = _normalize_weights(raw)[0]
    return MetricWeights((mi.owner, mj.owner), mi.metric_names, w)


def instance_distance(mi: MetricMatrix, mj: MetricMatrix, window: int | None = None) -> float:
    """Weighted sum over metrics of the per-column DTW distance."""
    w = metric_weights(mi, mj).weights
    d = np.array([dtw(mi.values[:, u], mj.values[:, u], window) for u in range(mi.n_metrics)])
    return float(_combine(w, d)[0])


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    members: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = len(self.members)
        if v.shape != (m, m):
            raise ValidationError(f"distance matrix shape {v.shape} does not match {m} members")
        v.setflags(write=False)
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.members)


def common_metrics(matrices: Sequence[MetricMatrix]) -> tuple:
    if not matrices:
        return ()
    shared = set(matrices[0].metric_names)
    for m in matrices[1:]:
        shared &= set(m.metric_names)
    return tuple(sorted(shared))


def _pair_indices(m: int) -> tuple[np.ndarray, np.ndarray]:
    left, right = np.triu_indices(m, k=1)
    return left.astype(np.int64), right.astype(np.int64)


def distance_matrix(
    members: Chunk | Sequence[str],
    metrics: Mapping[str, MetricMatrix],
    window: int | None = None,
    n_jobs: int = 1,
) -> DistanceMatrix:
    """Pairwise instance distances over the given members.

    Members are ordered by id. Every member must have a matrix in
    ``metrics``; columns are restricted to the metrics all members share.
    """
    ids = sort_ids(members.members if isinstance(members, Chunk) else members)
    m = len(ids)
    if m <= 1:
        return DistanceMatrix(tuple(ids), np.zeros((m, m)))
    mats = [metrics[i] for i in ids]
    names = common_metrics(mats)
    if not names:
        raise ValidationError(f"members {ids[:3]}... share no metric")
    mats = [mm if mm.metric_names == names else mm.select(names) for mm in mats]

    lengths = np.array([mm.n_timestamps for mm in mats], dtype=np.int64)
    values = np.zeros((m, int(lengths.max()), len(names)))
    for idx, mm in enumerate(mats):
        values[idx, : lengths[idx]] = mm.values
    stds = np.stack([mm.values.std(axis=0) for mm in mats])

    left, right = _pair_indices(m)
    win = _window_arg(window)
    if n_jobs > 1 and left.size > 1:
        parts = np.array_split(np.arange(left.size), min(n_jobs, left.size))
        with ThreadPoolExecutor(n_jobs) as pool:
            pieces = list(pool.map(lambda s: _pairwise_column_dtw(values, lengths, left[s], right[s], win), parts))
        col_dtw = np.concatenate(pieces)
    else:
        col_dtw = _pairwise_column_dtw(values, lengths, left, right, win)
    weights = _normalize_weights(0.5 * (stds[left] + stds[right]))
    d = _combine(weights, col_dtw)

    out = np.zeros((m, m))
    out[left, right] = d
    out[right, left] = d
    return DistanceMatrix(tuple(ids), out)


@dataclass(frozen=True)
class Merge:
    left: str
    right: str
    height: float


@dataclass
class Dendrogram:
    """Full complete-linkage merge history over ``members``.

    Each merge joins the clusters represented by their smallest member
    ids; heights never decrease.
    """

    members: tuple
    merges: list = field(default_factory=list)

    def cut(self, theta: float) -> list[tuple]:
        """Clusters formed by applying every merge with height <= theta."""
        groups = {m: [m] for m in self.members}
        for mg in self.merges:
            if mg.height > theta:
                break
            groups[mg.left].extend(groups.pop(mg.right))
        return sorted((tuple(sort_ids(g)) for g in groups.values()), key=lambda g: g[0])

    @property
    def heights(self) -> list[float]:
        return [mg.height for mg in self.merges]

    def to_dict(self) -> dict:
        return {
            "members": list(self.members),
            "merges": [[mg.left, mg.right, mg.height] for mg in self.merges],
        }


def build_dendrogram(dist: DistanceMatrix) -> Dendrogram:
    """Complete-linkage agglomeration down to a single cluster.

    Clusters are tracked by their smallest member index. Among equally
    close pairs the one whose smaller representative comes first wins,
    then the one whose other representative comes first.
    """
    m = len(dist)
    ids = dist.members
    dendro = Dendrogram(ids)
    if m <= 1:
        return dendro
    d = np.array(dist.values, dtype=float)
    upper = np.triu(np.ones((m, m), dtype=bool), k=1)
    work = np.where(upper, d, np.inf)
    for _ in range(m - 1):
        flat = int(np.argmin(work))
        i, j = divmod(flat, m)
        height = float(work[i, j])
        dendro.merges.append(Merge(ids[i], ids[j], height))
        # complete linkage: distance to the merged cluster is the max
        merged = np.maximum(d[i], d[j])
        d[i, :] = merged
        d[:, i] = merged
        work[:i, i] = np.where(np.isfinite(work[:i, i]), merged[:i], np.inf)
        work[i, i + 1:] = np.where(np.isfinite(work[i, i + 1:]), merged[i + 1:], np.inf)
        work[j, :] = np.inf
        work[:, j] = np.inf
    return dendro


def hac(dist: DistanceMatrix, theta_hac: float, parent_chunk: int = 0, first_id: int = 0) -> list[FunctionalCluster]:
    """Complete-linkage clusters of ``dist`` cut at ``theta_hac``."""
    groups = build_dendrogram(dist).cut(theta_hac)
    return [FunctionalCluster(first_id + n, g, parent_chunk) for n, g in enumerate(groups)]


@dataclass
class ClusteringResult:
    clusters: list
    dendrograms: dict
    missing_metrics: list


def _chunk_groups(chunk: Chunk, metrics: Mapping[str, MetricMatrix], theta: float, window, n_jobs: int):
    eligible = [m for m in chunk.members if m in metrics and metrics[m].eligible]
    missing = [m for m in chunk.members if m not in eligible]
    dendro = None
    if len(eligible) > 1 and not common_metrics([metrics[m] for m in eligible]):
        logger.warning("chunk members %s share no metric; leaving them unclustered", eligible[:3])
        groups = [(m,) for m in eligible]
    else:
        dendro = build_dendrogram(distance_matrix(eligible, metrics, window, n_jobs))
        groups = dendro.cut(theta)
    groups = groups + [(m,) for m in missing]
    groups.sort(key=lambda g: g[0])
    return groups, dendro, missing


def cluster_chunks(
    chunks: Sequence[Chunk],
    metrics: Mapping[str, MetricMatrix],
    config: PipelineConfig | None = None,
    n_jobs: int = 1,
) -> ClusteringResult:
    """Run HAC independently per chunk and number clusters globally.

    ``metrics`` should already be preprocessed. Members with no (or an
    ineligible) matrix become singleton clusters and are listed in
    ``missing_metrics``. Cluster ids follow chunk order, then smallest
    member id, so they do not depend on ``n_jobs``.
    """
    config = config or PipelineConfig()
    theta, window = config.theta_hac, config.dtw_window

    def work(chunk):
        return _chunk_groups(chunk, metrics, theta, window, 1)

    if n_jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(work, chunks))
    elif len(chunks) == 1:
        results = [_chunk_groups(chunks[0], metrics, theta, window, n_jobs)]
    else:
        results = [work(c) for c in chunks]

    clusters, dendros, missing = [], {}, []
    for chunk_id, (groups, dendro, miss) in enumerate(results):
        for g in groups:
            clusters.append(FunctionalCluster(len(clusters), g, chunk_id))
        if dendro is not None:
            dendros[chunk_id] = dendro
        missing.extend(miss)
    if missing:
        logger.warning("%d instance(s) lack usable metrics and were left as singleton clusters", len(missing))
    return ClusteringResult(clusters, dendros, sort_ids(missing))


def cluster_all(
    chunks: Sequence[Chunk],
    metrics: Mapping[str, MetricMatrix],
    config: PipelineConfig | None = None,
    n_jobs: int = 1,
) -> list[FunctionalCluster]:
    return cluster_chunks(chunks, metrics, config, n_jobs).clusters


class WeightedDTWAgglomerative(ClusterMixin, BaseEstimator):
    """Complete-linkage clustering under the variance-weighted DTW distance.

    ``fit`` takes a mapping of id to ``MetricMatrix``, a sequence of
    matrices / 2-D arrays (timestamps x metrics), or a 3-D array. Inputs
    are used as given; run them through ``MetricPreprocessor`` first.

    Attributes
    ----------
    instance_ids_ : ndarray of str
    labels_ : ndarray of int
    distance_matrix_ : DistanceMatrix
    dendrogram_ : Dendrogram
    n_clusters_ : int
    """

    def __init__(self, theta_hac=0.4, window=None, n_jobs=1):
        self.theta_hac = theta_hac
        self.window = window
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        if not 0.0 <= float(self.theta_hac) <= 1.0:
            raise ValidationError(f"theta_hac must lie in [0, 1], got {self.theta_hac}")
        mats = check_metric_matrices(X)
        bad = [k for k, m in mats.items() if not m.eligible]
        if bad:
            raise ValidationError(f"matrices need >= 2 finite timestamps: {bad[:5]}")
        self.distance_matrix_ = distance_matrix(list(mats), mats, self.window, self.n_jobs)
        self.dendrogram_ = build_dendrogram(self.distance_matrix_)
        groups = self.dendrogram_.cut(float(self.theta_hac))
        label_of = {m: n for n, g in enumerate(groups) for m in g}
        self.instance_ids_ = np.array(self.distance_matrix_.members, dtype=object)
        self.labels_ = np.array([label_of[i] for i in self.instance_ids_], dtype=np.int64)
        self.n_clusters_ = len(groups)
        return self
