"""Catapult layer: LSH region identification, per-bucket LRU shortcut tables,
and the catapulted lookup wrapper around beam search.

A catapult is a graph node id recorded from a past query's best result and
stored in the LSH bucket of that query. Later queries hashing to the same
bucket start their traversal from those nodes (plus the medoid), skipping
the hops from the medoid into the neighborhood.
"""

from __future__ import annotations

import threading
import time
from typing import Optional

import numpy as np

from . import _kernels
from .graph import ProximityGraph
from .search import QueryStats, SearchResult, _run_search
from .vecstore import VectorDataset


class HyperplaneHasher:
    """L random hyperplane normals mapping a vector to a bucket in [0, 2^L).

    Bit i (most significant first) is 1 iff q . r_i >= 0, so the hash is
    scale-invariant: no calibration against the dataset is needed, and it
    never has to be rebuilt when vectors are inserted.
    """

    def __init__(self, dim: int, bits: int = 8, seed: int = 0):
        if bits < 1:
            raise ValueError("bits must be positive")
        rng = np.random.default_rng(seed)
        self.bits = bits
        self.seed = seed
        self.normals = rng.standard_normal((bits, dim)).astype(np.float32)
        self._weights = (1 << np.arange(bits - 1, -1, -1)).astype(np.int64)

    @classmethod
    def from_normals(cls, normals: np.ndarray) -> "HyperplaneHasher":
        normals = np.asarray(normals, dtype=np.float32)
        hasher = cls(dim=normals.shape[1], bits=normals.shape[0])
        hasher.normals = normals
        return hasher

    @property
    def bucket_count(self) -> int:
        return 1 << self.bits

    def hash(self, q: np.ndarray) -> int:
        if not (isinstance(q, np.ndarray) and q.dtype == np.float32 and q.ndim == 1):
            q = np.asarray(q, dtype=np.float32).reshape(-1)
        if q.shape[0] != self.normals.shape[1]:
            raise ValueError("query dim does not match hasher dim")
        return int(_kernels.hash_code(self.normals, q))

    def hash_batch(self, values: np.ndarray) -> np.ndarray:
        bits = (values @ self.normals.T) >= 0.0
        return bits @ self._weights


class _RWLock:
    """Small reader-preference readers/writer lock."""

    __slots__ = ("_readers", "_gate", "_write")

    def __init__(self):
        self._readers = 0
        self._gate = threading.Lock()
        self._write = threading.Lock()

    def acquire_read(self):
        with self._gate:
            self._readers += 1
            if self._readers == 1:
                self._write.acquire()

    def release_read(self):
        with self._gate:
            self._readers -= 1
            if self._readers == 0:
                self._write.release()

    def acquire_write(self):
        self._write.acquire()

    def release_write(self):
        self._write.release()


class CatapultTable:
    """2^bits buckets of at most `capacity` node ids in LRU order.

    Most-recent entries sit at the end of a bucket. Every bucket carries its
    own readers/writer lock: snapshots take the read side, publishes the
    write side, and traffic to different buckets never contends.
    """

    _EMPTY = np.empty(0, dtype=np.int64)

    def __init__(self, bits: int = 8, capacity: int = 40):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.bits = bits
        self.capacity = capacity
        self.bucket_count = 1 << bits
        self._buckets: list[list[int]] = [[] for _ in range(self.bucket_count)]
        # frozen array image of each bucket, replaced (never mutated) on
        # publish; snapshot readers hand it out without copying
        self._arrays: list[np.ndarray] = [self._EMPTY] * self.bucket_count
        self._locks = [_RWLock() for _ in range(self.bucket_count)]

    def snapshot(self, idx: int) -> list[int]:
        """Caller-owned copy of bucket `idx`, taken under the read lock."""
        return [int(v) for v in self.snapshot_array(idx)]

    def snapshot_array(self, idx: int) -> np.ndarray:
        """Immutable LRU-ordered id array of bucket `idx` (read-locked)."""
        if not 0 <= idx < self.bucket_count:
            raise ValueError(f"bucket index {idx} out of range")
        lock = self._locks[idx]
        lock.acquire_read()
        arr = self._arrays[idx]
        lock.release_read()
        return arr

    def publish(self, idx: int, node: int) -> None:
        """Insert or refresh `node` as most-recent; LRU-evict past capacity."""
        if not 0 <= idx < self.bucket_count:
            raise ValueError(f"bucket index {idx} out of range")
        node = int(node)
        lock = self._locks[idx]
        lock.acquire_write()
        try:
            bucket = self._buckets[idx]
            if bucket and bucket[-1] == node:
                return  # already most-recent: refresh is a no-op
            try:
                bucket.remove(node)
            except ValueError:
                pass
            bucket.append(node)
            while len(bucket) > self.capacity:
                bucket.pop(0)
            assert len(bucket) <= self.capacity
            self._arrays[idx] = np.array(bucket, dtype=np.int64)
        finally:
            lock.release_write()

    def bucket_lengths(self) -> list[int]:
        return [len(b) for b in self._buckets]

    def total_stored(self) -> int:
        return sum(len(b) for b in self._buckets)

    def dump(self, path) -> None:
        """Debug dump: one line per non-empty bucket, ids in LRU order."""
        with open(path, "w") as f:
            for idx in range(self.bucket_count):
                snap = self.snapshot(idx)
                if snap:
                    f.write(f"{idx}: {' '.join(str(v) for v in snap)}\n")


class CatapultEngine:
    """Catapulted lookups over a built graph: snapshot the query's LSH
    bucket, beam-search from the bucket's destinations plus the medoid, then
    publish the best returned id back into the bucket.

    `publish=False` freezes the table (used by the exact-equivalence gate:
    with an empty frozen table every lookup degenerates to a plain medoid
    search).
    """

    def __init__(self, graph: ProximityGraph, dataset: VectorDataset,
                 lsh_bits: int = 8, bucket_capacity: int = 40, seed: int = 0,
                 publish: bool = True,
                 hasher: Optional[HyperplaneHasher] = None,
                 table: Optional[CatapultTable] = None):
        if graph.count < 1:
            raise ValueError("engine requires a non-empty graph")
        self.graph = graph
        self.dataset = dataset
        self.hasher = hasher or HyperplaneHasher(dataset.dim, lsh_bits, seed)
        self.table = table or CatapultTable(self.hasher.bits, bucket_capacity)
        self.publish = publish

    def lookup(self, q: np.ndarray, k: int) -> tuple[SearchResult, QueryStats]:
        t0 = time.perf_counter_ns()
        if k < 1:
            raise ValueError("k must be >= 1")
        if not (isinstance(q, np.ndarray) and q.dtype == np.float32 and q.ndim == 1):
            q = np.asarray(q, dtype=np.float32).reshape(-1)
        if q.shape[0] != self.dataset.dim:
            raise ValueError("query dim does not match dataset dim")

        idx = self.hasher.hash(q)
        snap = self.table.snapshot_array(idx)
        n_snap = snap.shape[0]
        sp = np.empty(n_snap + 1, dtype=np.int64)
        sp[:n_snap] = snap
        sp[n_snap] = self.graph.medoid

        ids, dists, hops, dcomp = _run_search(self.graph, self.dataset, q, k, sp)
        if self.publish and len(ids):
            self.table.publish(idx, int(ids[0]))
        stats = QueryStats(
            hops=hops, nodes_visited=hops, distance_computations=dcomp,
            catapult_used=n_snap > 0,
            elapsed=(time.perf_counter_ns() - t0) / 1000.0,
        )
        return SearchResult(ids=ids, distances=dists), stats
