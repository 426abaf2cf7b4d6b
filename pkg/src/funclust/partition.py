"""Trace-based coarse partitioning.

Instances whose destination sets overlap (Jaccard similarity at or above
``theta_lsh``) are merged into chunks. Candidate pairs come from a banded
MinHash LSH index, and every candidate is verified with the exact Jaccard
similarity before it is merged, so LSH only ever costs recall, never
precision.
"""

from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .ingest import filter_high_fanout
from .model import Chunk, DestinationSet, PipelineConfig, ValidationError, sort_ids
from .validation import check_destination_sets, check_fitted

_MASK64 = (1 << 64) - 1


def jaccard(a, b) -> float:
    """``|a & b| / |a | b|``; two empty sets score 0."""
    sa = a.destinations if isinstance(a, DestinationSet) else frozenset(a)
    sb = b.destinations if isinstance(b, DestinationSet) else frozenset(b)
    union = len(sa | sb)
    if union == 0:
        return 0.0
    return len(sa & sb) / union


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


@lru_cache(maxsize=1 << 20)
def _token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def permutation_seeds(perms: int, seed: int) -> np.ndarray:
    """One 64-bit key per permutation, derived from ``seed`` and the index."""
    counter = np.arange(perms, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    return _splitmix64(counter ^ np.uint64(int(seed) & _MASK64))


@dataclass(frozen=True, eq=False)
class MinHashSignature:
    owner: str
    values: np.ndarray

    def __len__(self):
        return self.values.size

    def estimate(self, other: "MinHashSignature") -> float:
        """Fraction of matching positions, an unbiased Jaccard estimate."""
        if len(self) != len(other):
            raise ValidationError("signatures have different lengths")
        return float(np.mean(self.values == other.values))


class MinHasher:
    """Seeded family of ``perms`` 64-bit hash functions."""

    def __init__(self, perms: int = 128, seed: int = 0):
        if perms < 1:
            raise ValidationError("perms must be positive")
        self.perms = int(perms)
        self.seed = int(seed)
        self._keys = permutation_seeds(self.perms, self.seed)

    def signature(self, dset: DestinationSet | Iterable[str], owner: str | None = None) -> MinHashSignature:
        if isinstance(dset, DestinationSet):
            owner = dset.owner if owner is None else owner
            tokens = dset.destinations
        else:
            tokens = frozenset(dset)
        if not tokens:
            raise ValidationError(
                f"cannot MinHash the empty destination set of {owner!r}; route it to a singleton chunk"
            )
        base = np.fromiter((_token_hash(t) for t in tokens), dtype=np.uint64, count=len(tokens))
        hashed = _splitmix64(base[:, None] ^ self._keys[None, :])
        values = hashed.min(axis=0)
        values.setflags(write=False)
        return MinHashSignature(owner or "", values)


def minhash(dset: DestinationSet | Iterable[str], perms: int = 128, seed: int = 0) -> MinHashSignature:
    return MinHasher(perms, seed).signature(dset)


def choose_bands(perms: int, theta: float) -> tuple[int, int]:
    """Pick ``(bands, rows)`` with ``bands * rows == perms`` whose S-curve
    threshold ``(1/bands) ** (1/rows)`` lies closest to ``theta``."""
    best, best_gap = (perms, 1), None
    for rows in range(1, perms + 1):
        if perms % rows:
            continue
        bands = perms // rows
        gap = abs((1.0 / bands) ** (1.0 / rows) - theta)
        if best_gap is None or gap < best_gap:
            best, best_gap = (bands, rows), gap
    return best


@dataclass
class LshIndex:
    bands: int
    rows: int
    buckets: dict = field(default_factory=dict)
    keys: dict = field(default_factory=dict)

    def _band_keys(self, sig: MinHashSignature) -> list:
        v = sig.values
        return [(b, v[b * self.rows:(b + 1) * self.rows].tobytes()) for b in range(self.bands)]

    def insert(self, sig: MinHashSignature) -> None:
        if len(sig) != self.bands * self.rows:
            raise ValidationError(f"signature length {len(sig)} != {self.bands}x{self.rows}")
        if sig.owner in self.keys:
            raise ValidationError(f"{sig.owner!r} already inserted")
        keys = self._band_keys(sig)
        self.keys[sig.owner] = keys
        for key in keys:
            self.buckets.setdefault(key, []).append(sig.owner)

    def candidates(self, owner: str) -> set:
        try:
            keys = self.keys[owner]
        except KeyError:
            raise KeyError(f"instance {owner!r} is not in the LSH index") from None
        found = set()
        for key in keys:
            found.update(self.buckets[key])
        found.discard(owner)
        return found

    @property
    def n_entries(self) -> int:
        return sum(len(v) for v in self.buckets.values())


def lsh_build(signatures: Iterable[MinHashSignature], theta_lsh: float) -> LshIndex:
    signatures = list(signatures)
    lengths = {len(s) for s in signatures}
    if len(lengths) > 1:
        raise ValidationError(f"signatures have mixed lengths {sorted(lengths)}")
    perms = lengths.pop() if lengths else 128
    bands, rows = choose_bands(perms, theta_lsh)
    index = LshIndex(bands, rows)
    for sig in signatures:
        index.insert(sig)
    return index


def lsh_query(index: LshIndex, sets: Mapping[str, DestinationSet], owner: str, theta_lsh: float) -> set:
    """Neighbours of ``owner``: LSH candidates with exact Jaccard >= theta."""
    target = sets[owner]
    return {c for c in index.candidates(owner) if jaccard(target, sets[c]) >= theta_lsh}


class DisjointSet:
    """Union-find over hashable ids with union by rank and path compression."""

    def __init__(self, items: Iterable = ()):
        self.parent: dict = {}
        self.rank: dict = {}
        for x in items:
            self.add(x)

    def add(self, x) -> None:
        if x not in self.parent:
            self.parent[x] = x
            self.rank[x] = 0

    def __contains__(self, x):
        return x in self.parent

    def __len__(self):
        return len(self.parent)

    def find(self, x):
        parent = self.parent
        if x not in parent:
            raise KeyError(f"{x!r} is not in the disjoint set")
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, x, y):
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return rx
        if self.rank[rx] < self.rank[ry]:
            rx, ry = ry, rx
        self.parent[ry] = rx
        if self.rank[rx] == self.rank[ry]:
            self.rank[rx] += 1
        return rx

    def groups(self) -> list[list]:
        out = defaultdict(list)
        for x in self.parent:
            out[self.find(x)].append(x)
        return list(out.values())


def ds_find(u: DisjointSet, x):
    return u.find(x)


def ds_union(u: DisjointSet, x, y):
    return u.union(x, y)


def partition(
    sets: Mapping[str, DestinationSet],
    config: PipelineConfig | None = None,
    singletons: Iterable[str] = (),
) -> list[Chunk]:
    """Group instances into chunks of transitively similar destination sets.

    ``sets`` should already be fan-out filtered. Instances with an empty
    destination set, plus any ids in ``singletons``, become one-member
    chunks. Chunks are sorted by their smallest member id.
    """
    config = config or PipelineConfig()
    theta = config.theta_lsh
    hasher = MinHasher(config.minhash_perms, config.rng_seed)
    owners = sort_ids(sets)
    hashable = [o for o in owners if sets[o].destinations]

    index = LshIndex(*choose_bands(config.minhash_perms, theta))
    for owner in hashable:
        index.insert(hasher.signature(sets[owner], owner))

    uf = DisjointSet(owners)
    for owner in hashable:
        for other in lsh_query(index, sets, owner, theta):
            if uf.find(owner) != uf.find(other):
                uf.union(owner, other)

    for extra in singletons:
        if extra not in uf:
            uf.add(extra)
    chunks = [Chunk(tuple(g)) for g in uf.groups()]
    chunks.sort(key=lambda c: c.members[0])
    return chunks


def chunk_labels(chunks: list[Chunk]) -> dict[str, int]:
    return {m: i for i, c in enumerate(chunks) for m in c.members}


class TracePartitioner(ClusterMixin, BaseEstimator):
    """Coarse clustering of instances by destination-set similarity.

    Parameters
    ----------
    theta_lsh : float
        Minimum exact Jaccard similarity for two instances to be linked.
    n_perm : int
        MinHash signature length.
    fanout_cap : int
        Instances with more distinct destinations than this are set aside
        as singleton chunks.
    random_state : int
        Seed of the MinHash family.

    Attributes
    ----------
    chunks_ : list of Chunk
    instance_ids_ : ndarray of str
    labels_ : ndarray of int
        Chunk index of each entry of ``instance_ids_``.
    removed_ : list of str
        Instances dropped by the fan-out cap.
    """

    def __init__(self, theta_lsh=0.5, n_perm=128, fanout_cap=100, random_state=20230901):
        self.theta_lsh = theta_lsh
        self.n_perm = n_perm
        self.fanout_cap = fanout_cap
        self.random_state = random_state

    def _config(self) -> PipelineConfig:
        return PipelineConfig(
            theta_lsh=self.theta_lsh,
            minhash_perms=self.n_perm,
            fanout_cap=self.fanout_cap,
            rng_seed=self.random_state,
        )

    def fit(self, X, y=None):
        """Partition ``X``: a mapping of instance id to destinations, or an
        iterable of ``TraceRecord``."""
        config = self._config()
        sets = check_destination_sets(X)
        kept, removed = filter_high_fanout(sets, config.fanout_cap)
        self.removed_ = removed
        self.chunks_ = partition(kept, config, singletons=removed)
        self.n_bands_, self.rows_per_band_ = choose_bands(config.minhash_perms, config.theta_lsh)
        labels = chunk_labels(self.chunks_)
        self.instance_ids_ = np.array(sort_ids(labels), dtype=object)
        self.labels_ = np.array([labels[i] for i in self.instance_ids_], dtype=np.int64)
        return self

    def predict_chunks(self) -> list[Chunk]:
        check_fitted(self, "chunks_")
        return list(self.chunks_)
