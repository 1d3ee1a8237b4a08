"""Label-aware indexing and filtered lookups.

Construction restricts the prune rule so every label subgraph stays
navigable from its own entry point; at query time traversal never leaves
the eligible subgraph, and catapult destinations are admitted as starting
points only when their own labels satisfy the active predicate.
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np

from .catapult import CatapultTable, HyperplaneHasher
from .graph import BuildParams, ProximityGraph, build_vamana, compute_medoid
from .search import QueryStats, SearchResult, _run_search
from .vecstore import LabelTable, VectorDataset


class FilterPredicate:
    """Required label set; a node is eligible iff its labels intersect it."""

    __slots__ = ("labels",)

    def __init__(self, labels):
        if isinstance(labels, int):
            labels = (labels,)
        self.labels = frozenset(int(v) for v in labels)
        if not self.labels:
            raise ValueError("predicate requires at least one label")
        if any(v < 0 for v in self.labels):
            raise ValueError("label ids must be non-negative")

    def matches(self, node_labels) -> bool:
        return bool(self.labels & node_labels)

    def __eq__(self, other):
        return isinstance(other, FilterPredicate) and self.labels == other.labels

    def __hash__(self):
        return hash(self.labels)

    def __repr__(self):
        return f"FilterPredicate({sorted(self.labels)})"


def eligibility_mask(labels: LabelTable, predicate: FilterPredicate,
                     count: int) -> np.ndarray:
    """uint8 mask over ids [0, count): 1 where the node satisfies the predicate.

    Ids beyond the label table (e.g. unlabeled insertions) stay ineligible.
    """
    mask = np.zeros(count, dtype=np.uint8)
    for label in predicate.labels:
        ids = labels.nodes_with_label(label)
        mask[ids[ids < count]] = 1
    return mask


def build_filtered_index(dataset: VectorDataset, labels: LabelTable,
                         params: BuildParams) -> ProximityGraph:
    """Vamana build under the label-aware prune rule, plus per-label entry points.

    During pruning a kept candidate may only discard another when the two
    share a label that the base point also carries, which preserves
    per-label subgraph navigability. Each label's entry point is the medoid
    of that label's node subset.
    """
    if len(labels) != dataset.count:
        raise ValueError("every node must have a label row")
    for i in range(len(labels)):
        if not labels.for_node(i):
            raise ValueError(f"node {i} is unlabeled")
    labels.validate(dataset.count)

    graph = build_vamana(dataset, params, label_csr=labels.as_csr())
    entry_points = {}
    for label in sorted(labels.all_labels()):
        subset = labels.nodes_with_label(label)
        entry_points[label] = compute_medoid(
            dataset, sample_limit=10_000, seed=params.seed, subset=subset
        )
    graph.entry_points = entry_points
    return graph


def entry_points_for(graph: ProximityGraph, predicate: FilterPredicate) -> list[int]:
    """Entry points of the predicate's labels, ascending by label id."""
    if graph.entry_points is None:
        raise ValueError("graph was built without per-label entry points")
    return [
        graph.entry_points[label]
        for label in sorted(predicate.labels)
        if label in graph.entry_points
    ]


def filtered_beam_search(graph: ProximityGraph, dataset: VectorDataset,
                         labels: LabelTable, q: np.ndarray, k: int,
                         predicate: FilterPredicate, sp,
                         mask: Optional[np.ndarray] = None,
                         ) -> tuple[SearchResult, QueryStats]:
    """Beam search restricted to predicate-eligible nodes.

    Ineligible ids in sp are discarded and ineligible neighbors are never
    added to the candidate pool. When nothing eligible remains to start
    from, returns an empty result with `stats.no_eligible_start` set.
    """
    t0 = time.perf_counter_ns()
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(q, dtype=np.float32).reshape(-1)
    if q.shape[0] != dataset.dim:
        raise ValueError("query dim does not match dataset dim")
    sp = np.asarray(list(sp) if not isinstance(sp, np.ndarray) else sp,
                    dtype=np.int64).reshape(-1)
    if sp.size and ((sp < 0).any() or (sp >= graph.count).any()):
        raise ValueError("sp contains an invalid node id")
    if mask is None:
        mask = eligibility_mask(labels, predicate, dataset.count)

    if sp.size == 0 or not mask[sp].any():
        stats = QueryStats(no_eligible_start=True, eligible_catapults=0,
                           elapsed=(time.perf_counter_ns() - t0) / 1000.0)
        return SearchResult(ids=np.empty(0, dtype=np.int64),
                            distances=np.empty(0, dtype=np.float64)), stats

    ids, dists, hops, dcomp = _run_search(graph, dataset, q, k, sp, eligible=mask)
    stats = QueryStats(hops=hops, nodes_visited=hops,
                       distance_computations=dcomp,
                       elapsed=(time.perf_counter_ns() - t0) / 1000.0)
    return SearchResult(ids=ids, distances=dists), stats


class FilteredCatapultEngine:
    """Catapulted lookups over a label-built graph.

    The catapult table is shared with unfiltered traffic: destinations are
    checked against the active predicate at snapshot time (a destination's
    own labels decide eligibility), and the per-label entry points are
    always injected as the navigable fallback.
    """

    def __init__(self, graph: ProximityGraph, dataset: VectorDataset,
                 labels: LabelTable, lsh_bits: int = 8,
                 bucket_capacity: int = 40, seed: int = 0, publish: bool = True,
                 hasher: Optional[HyperplaneHasher] = None,
                 table: Optional[CatapultTable] = None):
        if graph.entry_points is None:
            raise ValueError("graph was built without per-label entry points")
        self.graph = graph
        self.dataset = dataset
        self.labels = labels
        self.hasher = hasher or HyperplaneHasher(dataset.dim, lsh_bits, seed)
        self.table = table or CatapultTable(self.hasher.bits, bucket_capacity)
        self.publish = publish
        self._masks: dict[FilterPredicate, np.ndarray] = {}

    def _mask(self, predicate: FilterPredicate) -> np.ndarray:
        mask = self._masks.get(predicate)
        if mask is None or mask.shape[0] != self.dataset.count:
            mask = eligibility_mask(self.labels, predicate, self.dataset.count)
            self._masks[predicate] = mask
        return mask

    def lookup(self, q: np.ndarray, k: int, predicate: FilterPredicate,
               ) -> tuple[SearchResult, QueryStats]:
        """Filtered catapulted lookup: eligible bucket destinations plus the
        predicate's entry points seed a filtered beam search; the best
        result (which satisfies the predicate) is published back."""
        t0 = time.perf_counter_ns()
        mask = self._mask(predicate)
        if not (isinstance(q, np.ndarray) and q.dtype == np.float32 and q.ndim == 1):
            q = np.asarray(q, dtype=np.float32).reshape(-1)
        idx = self.hasher.hash(q)
        snap = self.table.snapshot_array(idx)
        survivors = [int(s) for s in snap if s < mask.shape[0] and mask[s]]
        sp = survivors + entry_points_for(self.graph, predicate)

        res, stats = filtered_beam_search(
            self.graph, self.dataset, self.labels, q, k, predicate, sp,
            mask=mask,
        )
        if self.publish and len(res.ids):
            self.table.publish(idx, int(res.ids[0]))
        stats.catapult_used = len(snap) > 0
        stats.eligible_catapults = len(survivors)
        stats.elapsed = (time.perf_counter_ns() - t0) / 1000.0
        return res, stats

    def vanilla_lookup(self, q: np.ndarray, k: int, predicate: FilterPredicate,
                       ) -> tuple[SearchResult, QueryStats]:
        """Filtered search from the per-label entry points only (baseline)."""
        return filtered_beam_search(
            self.graph, self.dataset, self.labels, q, k, predicate,
            entry_points_for(self.graph, predicate), mask=self._mask(predicate),
        )
