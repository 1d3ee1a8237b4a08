"""Comparison systems: medoid-only vanilla search, a static LSH entry-point
baseline, and a threshold-based approximate result cache.

The LSH-entry baseline keeps only the essential idea of hash-selected
starting points - buckets are filled once at build time from the data
distribution and never adapt. The cache returns stored results verbatim for
queries within tau of a cached query, which is what makes it fast on
repetitive streams and stale under insertions.
"""

from __future__ import annotations

import time
from collections import OrderedDict
from typing import Callable, Optional

import numpy as np

from .catapult import HyperplaneHasher
from .graph import ProximityGraph
from .search import QueryStats, SearchResult, _run_search
from .vecstore import VectorDataset

LookupFn = Callable[[np.ndarray, int], tuple[SearchResult, QueryStats]]


class VanillaEngine:
    """Plain beam search from the graph medoid."""

    def __init__(self, graph: ProximityGraph, dataset: VectorDataset):
        if graph.count < 1:
            raise ValueError("engine requires a non-empty graph")
        self.graph = graph
        self.dataset = dataset

    def lookup(self, q: np.ndarray, k: int) -> tuple[SearchResult, QueryStats]:
        t0 = time.perf_counter_ns()
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(q, dtype=np.float32).reshape(-1)
        if q.shape[0] != self.dataset.dim:
            raise ValueError("query dim does not match dataset dim")
        sp = np.array([self.graph.medoid], dtype=np.int64)
        ids, dists, hops, dcomp = _run_search(self.graph, self.dataset, q, k, sp)
        stats = QueryStats(hops=hops, nodes_visited=hops,
                           distance_computations=dcomp,
                           elapsed=(time.perf_counter_ns() - t0) / 1000.0)
        return SearchResult(ids=ids, distances=dists), stats


class StaticLshIndex:
    """Per-bucket starting points computed once from the indexed data.

    Every data point is hashed; each bucket retains the `members_per_bucket`
    points closest to the bucket's member mean. Immutable after construction.
    """

    def __init__(self, dataset: VectorDataset, hasher: HyperplaneHasher,
                 members_per_bucket: int = 8):
        if members_per_bucket < 1:
            raise ValueError("members_per_bucket must be positive")
        self.hasher = hasher
        self.members_per_bucket = members_per_bucket
        codes = hasher.hash_batch(dataset.values)
        members: dict[int, np.ndarray] = {}
        order = np.argsort(codes, kind="stable")
        sorted_codes = codes[order]
        starts = np.searchsorted(sorted_codes, np.arange(hasher.bucket_count))
        ends = np.searchsorted(sorted_codes, np.arange(hasher.bucket_count), "right")
        for code in range(hasher.bucket_count):
            ids = order[starts[code] : ends[code]]
            if ids.size == 0:
                continue
            pts = dataset.values[ids].astype(np.float64)
            mean = pts.mean(axis=0)
            diffs = pts - mean
            d = np.einsum("ij,ij->i", diffs, diffs)
            keep = np.lexsort((ids, d))[:members_per_bucket]
            members[code] = np.sort(ids[keep]).astype(np.int64)
        self._members = members

    def starting_points(self, code: int) -> np.ndarray:
        return self._members.get(code, np.empty(0, dtype=np.int64))

    def content_fingerprint(self) -> int:
        """Stable hash of the full table contents (immutability checks)."""
        acc = 0
        for code in sorted(self._members):
            acc = hash((acc, code, tuple(self._members[code].tolist())))
        return acc


class StaticLshEngine:
    """Beam search seeded by the static bucket members plus the medoid."""

    def __init__(self, graph: ProximityGraph, dataset: VectorDataset,
                 lsh_bits: int = 8, members_per_bucket: int = 8, seed: int = 0,
                 hasher: Optional[HyperplaneHasher] = None):
        if graph.count < 1:
            raise ValueError("engine requires a non-empty graph")
        self.graph = graph
        self.dataset = dataset
        self.hasher = hasher or HyperplaneHasher(dataset.dim, lsh_bits, seed)
        self.index = StaticLshIndex(dataset, self.hasher, members_per_bucket)

    def lookup(self, q: np.ndarray, k: int) -> tuple[SearchResult, QueryStats]:
        t0 = time.perf_counter_ns()
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(q, dtype=np.float32).reshape(-1)
        if q.shape[0] != self.dataset.dim:
            raise ValueError("query dim does not match dataset dim")
        members = self.index.starting_points(self.hasher.hash(q))
        sp = np.empty(members.shape[0] + 1, dtype=np.int64)
        sp[: members.shape[0]] = members
        sp[members.shape[0]] = self.graph.medoid
        ids, dists, hops, dcomp = _run_search(self.graph, self.dataset, q, k, sp)
        stats = QueryStats(hops=hops, nodes_visited=hops,
                           distance_computations=dcomp,
                           elapsed=(time.perf_counter_ns() - t0) / 1000.0)
        return SearchResult(ids=ids, distances=dists), stats


def calibrate_tau(queries: np.ndarray, percentile: float = 5.0,
                  sample: int = 256, seed: int = 0) -> float:
    """Percentile of pairwise Euclidean distances over a query sample."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.shape[0] < 2:
        return 0.0
    rng = np.random.default_rng(seed)
    if queries.shape[0] > sample:
        queries = queries[rng.choice(queries.shape[0], sample, replace=False)]
    sq = np.einsum("ij,ij->i", queries, queries)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (queries @ queries.T)
    iu = np.triu_indices(queries.shape[0], k=1)
    return float(np.percentile(np.sqrt(np.maximum(d2[iu], 0.0)), percentile))


class ApproxCache:
    """LRU cache of (query vector, result) pairs; single-threaded by design.

    Hit checks only scan entries in the query's own LSH bucket, keeping the
    per-query cost sublinear in the cache size.
    """

    def __init__(self, capacity: int, tau: float, hasher: HyperplaneHasher):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if tau < 0:
            raise ValueError("tau must be >= 0")
        self.capacity = capacity
        self.tau = tau
        self.hasher = hasher
        self._entries: OrderedDict[int, tuple[int, np.ndarray, SearchResult]] = (
            OrderedDict()
        )
        self._buckets: dict[int, list[int]] = {}
        self._serial = 0

    def __len__(self) -> int:
        return len(self._entries)

    def find(self, q: np.ndarray) -> Optional[SearchResult]:
        """Stored result of the nearest cached query within tau, or None."""
        code = self.hasher.hash(q)
        keys = self._buckets.get(code)
        if not keys:
            return None
        q64 = np.asarray(q, dtype=np.float64).reshape(-1)
        best_key, best_d = -1, float("inf")
        for key in keys:
            _, stored_q, _ = self._entries[key]
            d = float(np.sqrt(((stored_q - q64) ** 2).sum()))
            if d < best_d:
                best_key, best_d = key, d
        if best_d > self.tau:
            return None
        self._entries.move_to_end(best_key)
        return self._entries[best_key][2]

    def insert(self, q: np.ndarray, result: SearchResult) -> None:
        code = self.hasher.hash(q)
        key = self._serial
        self._serial += 1
        self._entries[key] = (
            code, np.asarray(q, dtype=np.float64).reshape(-1).copy(), result,
        )
        self._buckets.setdefault(code, []).append(key)
        while len(self._entries) > self.capacity:
            old_key, (old_code, _, _) = self._entries.popitem(last=False)
            self._buckets[old_code].remove(old_key)


def cache_lookup(cache: ApproxCache, q: np.ndarray, k: int,
                 underlying: LookupFn,
                 ) -> tuple[SearchResult, QueryStats, bool]:
    """Serve from the cache when a stored query is within tau, else run the
    underlying lookup and cache its result.

    Hits return the stored ids and distances verbatim with zero graph work;
    the stored entry is never recomputed, so it goes stale if the database
    underneath changes.
    """
    t0 = time.perf_counter_ns()
    hit = cache.find(q)
    if hit is not None:
        stats = QueryStats(cache_hit=True,
                           elapsed=(time.perf_counter_ns() - t0) / 1000.0)
        return hit, stats, True
    result, stats = underlying(q, k)
    cache.insert(q, result)
    stats.cache_hit = False
    stats.elapsed = (time.perf_counter_ns() - t0) / 1000.0
    return result, stats, False


class CachedEngine:
    """ApproxCache in front of a vanilla medoid search."""

    def __init__(self, graph: ProximityGraph, dataset: VectorDataset,
                 capacity: int, tau: float, lsh_bits: int = 8, seed: int = 0,
                 hasher: Optional[HyperplaneHasher] = None):
        self.underlying = VanillaEngine(graph, dataset)
        self.cache = ApproxCache(
            capacity, tau, hasher or HyperplaneHasher(dataset.dim, lsh_bits, seed)
        )

    def lookup(self, q: np.ndarray, k: int) -> tuple[SearchResult, QueryStats]:
        result, stats, _ = cache_lookup(self.cache, q, k, self.underlying.lookup)
        return result, stats
