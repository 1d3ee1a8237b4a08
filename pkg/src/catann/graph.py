"""Proximity-graph construction: two-pass alpha-pruned build, medoid
computation, single-point insertion, and the binary index format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .vecstore import FormatError, VectorDataset

_EMPTY_INDPTR = np.zeros(1, dtype=np.int64)
_EMPTY_LABELS = np.empty(0, dtype=np.int32)

_MAGIC = b"CPLT"
_INDEX_VERSION = 1
_IDX_HEADER = struct.Struct("<4sIIIII")  # magic, version, n, dim, R, medoid


@dataclass
class BuildParams:
    """Construction knobs: out-degree cap, pruning alpha, build beam width."""

    max_degree: int = 48
    alpha: float = 1.2
    build_beam_width: int = 96
    seed: int = 0

    def __post_init__(self):
        if self.max_degree < 1:
            raise ValueError("max_degree must be positive")
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1")
        if self.build_beam_width < 1:
            raise ValueError("build_beam_width must be positive")


class ProximityGraph:
    """Bounded-out-degree directed adjacency over dataset ids.

    Adjacency is a dense (capacity, max_degree) int32 block plus per-node
    degrees, which keeps the search kernels allocation-free and lets
    insertions mutate in place.
    """

    def __init__(self, adj: np.ndarray, deg: np.ndarray, count: int, dim: int,
                 max_degree: int, medoid: int,
                 entry_points: Optional[dict[int, int]] = None):
        self.adj = adj
        self.deg = deg
        self.count = count
        self.dim = dim
        self.max_degree = max_degree
        self.medoid = medoid  # -1 while the graph is empty
        self.entry_points = entry_points
        self._stamp: Optional[np.ndarray] = None
        self._cand_stamp: Optional[np.ndarray] = None
        self._stamp_val = 0

    @classmethod
    def empty(cls, dim: int, max_degree: int) -> "ProximityGraph":
        return cls(
            adj=np.zeros((0, max_degree), dtype=np.int32),
            deg=np.zeros(0, dtype=np.int32),
            count=0,
            dim=dim,
            max_degree=max_degree,
            medoid=-1,
        )

    def neighbors(self, i: int) -> np.ndarray:
        return self.adj[i, : self.deg[i]]

    def ensure_capacity(self, n: int) -> None:
        if self.adj.shape[0] >= n:
            return
        cap = max(n, int(self.adj.shape[0] * 1.5) + 1, 16)
        adj = np.zeros((cap, self.max_degree), dtype=np.int32)
        adj[: self.count] = self.adj[: self.count]
        deg = np.zeros(cap, dtype=np.int32)
        deg[: self.count] = self.deg[: self.count]
        self.adj = adj
        self.deg = deg

    def check_invariants(self) -> None:
        """Raise AssertionError when a structural invariant is violated."""
        for i in range(self.count):
            d = int(self.deg[i])
            assert d <= self.max_degree, f"node {i} out-degree {d} > R"
            nbrs = self.adj[i, :d]
            assert (nbrs != i).all(), f"node {i} has a self-loop"
            assert (nbrs >= 0).all() and (nbrs < self.count).all(), \
                f"node {i} has an out-of-range neighbor"
            assert len(set(nbrs.tolist())) == d, f"node {i} has duplicate edges"

    def _scratch(self, n: int) -> tuple[np.ndarray, np.ndarray, int]:
        if self._stamp is None or self._stamp.shape[0] < n:
            self._stamp = np.zeros(max(n, 1024), dtype=np.int32)
            self._cand_stamp = np.zeros(max(n, 1024), dtype=np.int32)
            self._stamp_val = 0
        self._stamp_val += 2
        if self._stamp_val > 2**31 - 4:
            self._stamp[:] = 0
            self._cand_stamp[:] = 0
            self._stamp_val = 2
        return self._stamp, self._cand_stamp, self._stamp_val


def _sum_sq_dists(values: np.ndarray, sample: np.ndarray) -> np.ndarray:
    """Per-row sum of squared Euclidean distances to the sample rows."""
    v = values.astype(np.float64)
    s = sample.astype(np.float64)
    v_norms = np.einsum("ij,ij->i", v, v)
    s_norms = np.einsum("ij,ij->i", s, s)
    return s.shape[0] * v_norms - 2.0 * (v @ s.sum(axis=0)) + s_norms.sum()


def compute_medoid(dataset: VectorDataset, sample_limit: int = 10_000,
                   seed: int = 0, subset: Optional[np.ndarray] = None) -> int:
    """Id minimizing the summed squared distance to all points (exact when
    count <= sample_limit, otherwise against a seeded random sample).

    With `subset`, both candidates and the reference points are restricted
    to those ids (used for per-label entry points). Ties go to the lowest id.
    """
    if sample_limit < 1:
        raise ValueError("sample_limit must be positive")
    if subset is None:
        ids = np.arange(dataset.count, dtype=np.int64)
    else:
        ids = np.asarray(subset, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cannot compute the medoid of an empty dataset")
    values = dataset.values[ids]
    if ids.size <= sample_limit:
        sample = values
    else:
        rng = np.random.default_rng(seed)
        pick = rng.choice(ids.size, size=sample_limit, replace=False)
        sample = values[pick]
    sums = _sum_sq_dists(values, sample)
    return int(ids[int(np.argmin(sums))])


def robust_prune(dataset: VectorDataset, p: int, candidates, alpha: float,
                 max_out: int, distances=None) -> list[int]:
    """Select up to `max_out` out-neighbors for p from `candidates`.

    `candidates` is an iterable of ids, or a mapping id -> squared distance
    to p; distances are computed when absent. Output order is insertion
    (ascending distance) order and is invariant to candidate input order.
    """
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    if max_out < 1:
        raise ValueError("max_out must be positive")
    if hasattr(candidates, "items"):
        ids = np.fromiter((int(i) for i in candidates), dtype=np.int64)
        dists = np.array([float(candidates[int(i)]) for i in ids], dtype=np.float64)
    else:
        ids = np.fromiter((int(i) for i in candidates), dtype=np.int64)
        dists = None
    if (ids == p).any():
        raise ValueError("p must not be among the candidates")
    if distances is not None:
        dists = np.asarray(distances, dtype=np.float64)
    if dists is None:
        diffs = dataset.values[ids].astype(np.float64) - dataset.get(p).astype(np.float64)
        dists = np.einsum("ij,ij->i", diffs, diffs)
    kept = _kernels.robust_prune(
        dataset.values, p, ids, dists, alpha * alpha, max_out,
        _EMPTY_INDPTR, _EMPTY_LABELS,
    )
    return [int(v) for v in kept]


def _random_regular_init(n: int, degree: int, rng: np.random.Generator) -> np.ndarray:
    """Per-node `degree` distinct random out-neighbors, self excluded."""
    adj = np.empty((n, degree), dtype=np.int32)
    if degree == n - 1:
        base = np.arange(n, dtype=np.int32)
        for i in range(n):
            adj[i, :i] = base[:i]
            adj[i, i:] = base[i + 1 :]
        return adj
    for i in range(n):
        row = rng.integers(0, n - 1, size=degree)
        row += row >= i
        seen = np.unique(row)
        while seen.size < degree:
            extra = rng.integers(0, n - 1, size=degree - seen.size)
            extra += extra >= i
            seen = np.unique(np.concatenate([seen, extra]))
        adj[i] = seen[:degree]
    return adj


def build_vamana(dataset: VectorDataset, params: BuildParams,
                 label_csr: Optional[tuple[np.ndarray, np.ndarray]] = None,
                 ) -> ProximityGraph:
    """Two-pass graph construction over a seeded random insertion order.

    Pass 1 prunes at alpha=1, pass 2 at params.alpha; both passes re-wire
    every node from a beam search rooted at the medoid and push reverse
    edges with overflow re-pruning. `label_csr` switches the prune rule to
    its label-aware variant (see the filtering module). Deterministic for a
    fixed (dataset, params).
    """
    n = dataset.count
    if n < 1:
        raise ValueError("cannot build over an empty dataset")
    R = params.max_degree
    medoid = compute_medoid(dataset, sample_limit=10_000, seed=params.seed)
    if n == 1:
        g = ProximityGraph.empty(dataset.dim, R)
        g.ensure_capacity(1)
        g.count = 1
        g.medoid = 0
        return g

    rng = np.random.default_rng(params.seed)
    r_init = min(R, n - 1)
    init = _random_regular_init(n, r_init, rng)
    adj = np.zeros((n, R), dtype=np.int32)
    adj[:, :r_init] = init
    deg = np.full(n, r_init, dtype=np.int32)
    order = rng.permutation(n).astype(np.int64)

    if label_csr is None:
        indptr, flat = _EMPTY_INDPTR, _EMPTY_LABELS
    else:
        indptr, flat = label_csr

    stamp = np.zeros(n, dtype=np.int32)
    cand_stamp = np.zeros(n, dtype=np.int32)
    vectors = dataset.values
    for alpha in (1.0, params.alpha):
        stamp[:] = 0
        cand_stamp[:] = 0
        _kernels.build_pass(
            vectors, adj, deg, order, medoid, params.build_beam_width,
            alpha * alpha, R, stamp, cand_stamp, indptr, flat,
        )

    return ProximityGraph(adj=adj, deg=deg, count=n, dim=dataset.dim,
                          max_degree=R, medoid=medoid)


def insert(graph: ProximityGraph, dataset: VectorDataset, v: np.ndarray,
           params: BuildParams) -> int:
    """Append v to the dataset and wire it into the graph.

    Beam-searches from the medoid, prunes the visited set into the new
    node's out-list, and adds reverse edges with overflow re-pruning. The
    medoid is not recomputed. Caller must hold exclusive access.
    """
    v = np.asarray(v, dtype=np.float32).reshape(-1)
    if v.shape[0] != dataset.dim:
        raise ValueError(f"vector has dim {v.shape[0]}, dataset has {dataset.dim}")
    new_id = dataset.append(v)
    graph.ensure_capacity(new_id + 1)
    if graph.count == 0:
        graph.count = 1
        graph.medoid = 0
        return 0
    graph.count = new_id + 1
    stamp, cand_stamp, val = graph._scratch(graph.count)
    _kernels._attach_node(
        dataset.values, graph.adj, graph.deg, new_id, graph.medoid,
        params.build_beam_width, params.alpha * params.alpha, graph.max_degree,
        stamp, val, cand_stamp, val + 1, _EMPTY_INDPTR, _EMPTY_LABELS,
    )
    return new_id


def save_index(graph: ProximityGraph, path) -> None:
    """Write the binary index: CPLT header then per-node degree + neighbors."""
    with open(path, "wb") as f:
        f.write(_IDX_HEADER.pack(
            _MAGIC, _INDEX_VERSION, graph.count, graph.dim, graph.max_degree,
            max(graph.medoid, 0),
        ))
        for i in range(graph.count):
            d = int(graph.deg[i])
            f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(graph.adj[i, :d], dtype="<u4").tobytes())


def load_index(path) -> ProximityGraph:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _IDX_HEADER.size:
        raise FormatError(f"{path}: truncated index header")
    magic, version, n, dim, r, medoid = _IDX_HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _INDEX_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n > 0 and medoid >= n:
        raise FormatError(f"{path}: medoid {medoid} out of range")
    adj = np.zeros((n, r), dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    off = _IDX_HEADER.size
    for i in range(n):
        if off + 4 > len(raw):
            raise FormatError(f"{path}: truncated at node {i}")
        (d,) = struct.unpack_from("<I", raw, off)
        off += 4
        if d > r:
            raise FormatError(f"{path}: node {i} degree {d} > R={r}")
        if off + 4 * d > len(raw):
            raise FormatError(f"{path}: truncated neighbor list at node {i}")
        adj[i, :d] = np.frombuffer(raw, dtype="<u4", count=d, offset=off)
        deg[i] = d
        off += 4 * d
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return ProximityGraph(adj=adj, deg=deg, count=n, dim=dim, max_degree=r,
                          medoid=medoid if n > 0 else -1)
