"""Instrumented greedy beam search over a proximity graph.

This is the single search primitive: the catapult layer, the filtered
variants and every baseline call into it with different starting-point sets.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .graph import ProximityGraph
from .vecstore import VectorDataset

_tls = threading.local()


def _thread_stamp(n: int) -> tuple[np.ndarray, int]:
    """Per-thread generation-stamped visited array, grown as needed."""
    state = getattr(_tls, "state", None)
    if state is None or state[0].shape[0] < n:
        state = [np.zeros(max(n, 1024), dtype=np.int32), 0]
        _tls.state = state
    state[1] += 1
    if state[1] > 2**31 - 2:
        state[0][:] = 0
        state[1] = 1
    return state[0], state[1]


@dataclass
class SearchResult:
    """Neighbor ids ascending by (distance, id) with matching distances."""

    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class QueryStats:
    hops: int = 0
    nodes_visited: int = 0
    distance_computations: int = 0
    catapult_used: bool = False
    elapsed: float = 0.0  # microseconds
    eligible_catapults: Optional[int] = None
    no_eligible_start: bool = False
    cache_hit: Optional[bool] = None


def _run_search(graph: ProximityGraph, dataset: VectorDataset, q: np.ndarray,
                k: int, sp: np.ndarray,
                eligible: np.ndarray = _kernels.NO_FILTER):
    """Kernel invocation plus scratch management; no validation."""
    stamp, val = _thread_stamp(dataset.count)
    ids, dists, hops, dcomp, _, _ = _kernels.beam_search(
        dataset.values, graph.adj, graph.deg, q, k, sp, stamp, val, eligible,
    )
    return ids, dists, hops, dcomp


def beam_search(graph: ProximityGraph, dataset: VectorDataset, q: np.ndarray,
                k: int, sp) -> tuple[SearchResult, QueryStats]:
    """Greedy beam search from the starting ids `sp`.

    The candidate pool and the result share the single width parameter k:
    the pool is trimmed to the k closest discovered nodes after every
    expansion and is returned, sorted, when fully visited.
    """
    t0 = time.perf_counter_ns()
    if k < 1:
        raise ValueError("k must be >= 1")
    sp = np.asarray(list(sp) if not isinstance(sp, np.ndarray) else sp,
                    dtype=np.int64).reshape(-1)
    if sp.size == 0:
        raise ValueError("sp must be non-empty")
    if (sp < 0).any() or (sp >= graph.count).any():
        raise ValueError("sp contains an invalid node id")
    q = np.asarray(q, dtype=np.float32).reshape(-1)
    if q.shape[0] != dataset.dim:
        raise ValueError("query dim does not match dataset dim")

    ids, dists, hops, dcomp = _run_search(graph, dataset, q, k, sp)
    stats = QueryStats(hops=hops, nodes_visited=hops,
                       distance_computations=dcomp,
                       elapsed=(time.perf_counter_ns() - t0) / 1000.0)
    return SearchResult(ids=ids, distances=dists), stats
