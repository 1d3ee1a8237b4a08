"""Vector storage, distance kernels, synthetic workload generation and binary I/O.

Also hosts the exact brute-force k-NN oracle that every recall measurement
in the benchmark harness is checked against.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

METRICS = ("squared-euclidean", "euclidean", "cosine")
DEFAULT_METRIC = "squared-euclidean"

_HEADER = struct.Struct("<ii")  # n, dim


class VectorDataset:
    """A dense collection of float32 vectors with stable ids 0..count-1.

    Vectors live in one contiguous (capacity, dim) array; `append` grows the
    backing store geometrically so single-point insertions stay cheap.
    """

    def __init__(self, values: np.ndarray):
        values = np.ascontiguousarray(values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError("values must be a 2D (count, dim) array")
        if values.size and not np.isfinite(values).all():
            raise ValueError("vector components must be finite")
        self._buf = values
        self._count = values.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "VectorDataset":
        if dim <= 0:
            raise ValueError("dim must be positive")
        return cls(np.empty((0, dim), dtype=np.float32))

    @property
    def dim(self) -> int:
        return self._buf.shape[1]

    @property
    def count(self) -> int:
        return self._count

    @property
    def values(self) -> np.ndarray:
        """Contiguous (count, dim) float32 view of the stored vectors."""
        return self._buf[: self._count]

    def get(self, i: int) -> np.ndarray:
        if not 0 <= i < self._count:
            raise IndexError(f"id {i} out of range [0, {self._count})")
        return self._buf[i]

    def append(self, vec: np.ndarray) -> int:
        """Append one vector and return its new id."""
        vec = np.asarray(vec, dtype=np.float32).reshape(-1)
        if vec.shape[0] != self.dim:
            raise ValueError(f"vector has dim {vec.shape[0]}, dataset has {self.dim}")
        if not np.isfinite(vec).all():
            raise ValueError("vector components must be finite")
        if self._count == self._buf.shape[0]:
            new_cap = max(16, int(self._buf.shape[0] * 1.5) + 1)
            grown = np.empty((new_cap, self.dim), dtype=np.float32)
            grown[: self._count] = self._buf[: self._count]
            self._buf = grown
        self._buf[self._count] = vec
        self._count += 1
        return self._count - 1

    def copy(self) -> "VectorDataset":
        return VectorDataset(self.values.copy())

    def __len__(self) -> int:
        return self._count


class LabelTable:
    """Per-node label sets, dense over ids 0..len-1."""

    def __init__(self, labels: Iterable[Iterable[int]]):
        self._labels = [frozenset(int(v) for v in row) for row in labels]
        for row in self._labels:
            if any(v < 0 for v in row):
                raise ValueError("label ids must be non-negative")
        self._by_label: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._labels)

    def for_node(self, i: int) -> frozenset:
        return self._labels[i]

    def nodes_with_label(self, label: int) -> np.ndarray:
        """Ids carrying `label`, ascending. Memoized inverted index."""
        cached = self._by_label.get(label)
        if cached is None:
            cached = np.array(
                [i for i, row in enumerate(self._labels) if label in row],
                dtype=np.int64,
            )
            self._by_label[label] = cached
        return cached

    def all_labels(self) -> set[int]:
        out: set[int] = set()
        for row in self._labels:
            out |= row
        return out

    def validate(self, dataset_count: int) -> None:
        if len(self._labels) > dataset_count:
            raise ValueError("label table keys exceed dataset count")

    def as_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Flatten to (indptr, sorted label ids) for the numba kernels."""
        indptr = np.zeros(len(self._labels) + 1, dtype=np.int64)
        flat: list[int] = []
        for i, row in enumerate(self._labels):
            vals = sorted(row)
            flat.extend(vals)
            indptr[i + 1] = indptr[i] + len(vals)
        return indptr, np.array(flat, dtype=np.int32)


@dataclass
class WorkloadSpec:
    """Parameters for a synthetic query stream."""

    mode: str  # uniform | zipf-clustered | shifted
    query_count: int
    dim: int
    zipf_s: float = 0.8
    cluster_count: int = 16
    cluster_stddev: float = 0.05
    shift_point: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("uniform", "zipf-clustered", "shifted"):
            raise ValueError(f"unknown workload mode {self.mode!r}")
        if self.query_count <= 0:
            raise ValueError("query_count must be positive")
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.zipf_s <= 0:
            raise ValueError("zipf_s must be > 0")
        if self.cluster_count <= 0:
            raise ValueError("cluster_count must be positive")
        if self.cluster_stddev <= 0:
            raise ValueError("cluster_stddev must be > 0")
        if self.shift_point is not None and not 0 <= self.shift_point < self.query_count:
            raise ValueError("shift_point must be < query_count")


def distance(a: np.ndarray, b: np.ndarray, metric: str = DEFAULT_METRIC) -> float:
    """Distance between two vectors under the given metric.

    Accumulates in float64 regardless of input dtype so that ordering ties
    are stable across call sites.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if metric == "squared-euclidean":
        d = a - b
        return float(d @ d)
    if metric == "euclidean":
        d = a - b
        return float(np.sqrt(d @ d))
    if metric == "cosine":
        na = float(np.sqrt(a @ a))
        nb = float(np.sqrt(b @ b))
        if na == 0.0 and nb == 0.0:
            return 0.0
        if na == 0.0 or nb == 0.0:
            return 1.0
        return float(1.0 - (a @ b) / (na * nb))
    raise ValueError(f"unknown metric {metric!r}")


class FormatError(Exception):
    """Raised when a binary vector file is malformed."""


def save_vectors(dataset: VectorDataset, path) -> None:
    """Write the little-endian binary vector format: i32 n, i32 dim, n*dim f32."""
    with open(path, "wb") as f:
        f.write(_HEADER.pack(dataset.count, dataset.dim))
        f.write(np.ascontiguousarray(dataset.values, dtype="<f4").tobytes())


def load_vectors(path) -> VectorDataset:
    """Read the binary vector format written by `save_vectors`."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    n, dim = _HEADER.unpack_from(raw)
    if n < 0 or dim <= 0:
        raise FormatError(f"{path}: invalid header n={n} dim={dim}")
    expected = _HEADER.size + 4 * n * dim
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, header implies {4 * n * dim}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, dim)
    return VectorDataset(values.copy())


def save_labels(labels: LabelTable, path) -> None:
    """One line per node id, comma-separated label ids; empty line = no labels."""
    with open(path, "w") as f:
        for i in range(len(labels)):
            f.write(",".join(str(v) for v in sorted(labels.for_node(i))))
            f.write("\n")


def load_labels(path) -> LabelTable:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            rows.append([int(v) for v in line.split(",")] if line else [])
    return LabelTable(rows)


def zipf_weights(count: int, s: float) -> np.ndarray:
    """Normalized rank weights w_r proportional to (r+1)^-s, r = 0..count-1."""
    w = np.arange(1, count + 1, dtype=np.float64) ** (-s)
    return w / w.sum()


def generate_workload(
    spec: WorkloadSpec, centroids: Optional[VectorDataset] = None
) -> VectorDataset:
    """Generate an ordered query stream.

    uniform: every component i.i.d. uniform on [-1, 1].
    zipf-clustered: each query is a cluster centroid (cluster drawn with
    probability proportional to rank^-zipf_s under a seeded rank->centroid
    permutation) plus isotropic Gaussian noise of `cluster_stddev`.
    shifted: like zipf-clustered, but from `shift_point` onward the
    rank->centroid permutation is redrawn with a fresh seed.

    Bit-reproducible for a fixed (spec, centroids).
    """
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "uniform":
        q = rng.uniform(-1.0, 1.0, size=(spec.query_count, spec.dim))
        return VectorDataset(q.astype(np.float32))

    if centroids is None:
        raise ValueError(f"mode {spec.mode!r} requires centroids")
    if centroids.count < spec.cluster_count:
        raise ValueError(
            f"need >= {spec.cluster_count} centroids, got {centroids.count}"
        )
    if centroids.dim != spec.dim:
        raise ValueError("centroid dim does not match spec dim")

    perm = rng.permutation(spec.cluster_count)
    cum = np.cumsum(zipf_weights(spec.cluster_count, spec.zipf_s))
    u = rng.random(spec.query_count)
    ranks = np.searchsorted(cum, u, side="right")
    np.clip(ranks, 0, spec.cluster_count - 1, out=ranks)
    noise = rng.normal(0.0, spec.cluster_stddev, size=(spec.query_count, spec.dim))

    clusters = perm[ranks]
    if spec.mode == "shifted":
        if spec.shift_point is None:
            raise ValueError("shifted mode requires shift_point")
        fresh = np.random.default_rng(spec.seed + 1).permutation(spec.cluster_count)
        clusters = clusters.copy()
        clusters[spec.shift_point :] = fresh[ranks[spec.shift_point :]]

    base = centroids.values[: spec.cluster_count][clusters].astype(np.float64)
    return VectorDataset((base + noise).astype(np.float32))


def _required_labels(predicate) -> frozenset:
    if predicate is None:
        return frozenset()
    labels = getattr(predicate, "labels", predicate)
    return frozenset(int(v) for v in labels)


def brute_force_knn(
    dataset: VectorDataset,
    q: np.ndarray,
    k: int,
    predicate=None,
    labels: Optional[LabelTable] = None,
    limit: Optional[int] = None,
) -> list[int]:
    """Exact k nearest neighbors of q, ascending by distance, ties by id.

    With a predicate (any iterable of label ids, or an object exposing
    `.labels`), only nodes whose label set intersects it are eligible;
    `labels` must then be provided. Returns fewer than k ids when the
    eligible set is smaller. `limit` restricts eligibility to ids < limit,
    which gives a fresh oracle against past dataset states (ids are append
    -only, so the first `limit` rows are exactly that state).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    required = _required_labels(predicate)
    if required and labels is None:
        raise ValueError("predicate given without a label table")
    q = np.asarray(q, dtype=np.float32).reshape(-1)
    if q.shape[0] != dataset.dim:
        raise ValueError("query dim does not match dataset dim")

    count = dataset.count if limit is None else min(limit, dataset.count)
    values = dataset.values
    if required:
        mask = np.zeros(count, dtype=bool)
        for lbl in required:
            ids = labels.nodes_with_label(lbl)
            mask[ids[ids < count]] = True
        eligible = np.nonzero(mask)[0]
    else:
        eligible = np.arange(count, dtype=np.int64)
    if eligible.size == 0:
        return []

    diffs = values[eligible].astype(np.float64) - q.astype(np.float64)
    dists = np.einsum("ij,ij->i", diffs, diffs)
    order = np.lexsort((eligible, dists))[:k]
    return [int(eligible[i]) for i in order]
