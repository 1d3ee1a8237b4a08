"""Benchmark harness: builds indices, replays query streams across engines
and thread counts, applies insertion schedules, and reports QPS, recall,
traversal and catapult-usage metrics.

Workers share one cursor over the stream so dequeue order preserves the
stream's temporal locality regardless of thread count. Insertion batches run
between stream segments under exclusive access; segment wall times exclude
both the warmup fraction and the insertion pauses from the QPS denominator.
"""

from __future__ import annotations

import csv
import json
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .baselines import CachedEngine, StaticLshEngine, VanillaEngine, calibrate_tau
from .catapult import CatapultEngine
from .filtering import FilteredCatapultEngine, FilterPredicate
from .graph import (
    BuildParams,
    ProximityGraph,
    build_vamana,
    insert,
    load_index,
)
from .filtering import build_filtered_index
from .vecstore import (
    LabelTable,
    VectorDataset,
    WorkloadSpec,
    brute_force_knn,
    generate_workload,
    load_labels,
    load_vectors,
)

ENGINES = ("vanilla", "catapult", "lsh-entry", "cache")


class ConfigError(ValueError):
    """Inconsistent benchmark configuration, raised before any run."""


@dataclass
class BenchConfig:
    # file-based inputs (CLI); the in-memory fields below override them
    dataset_path: Optional[str] = None
    labels_path: Optional[str] = None
    queries_path: Optional[str] = None
    index_path: Optional[str] = None
    truth_path: Optional[str] = None
    workload: Optional[dict] = None
    # distribution for inserted vectors; defaults to `workload` (query-like
    # inserts). Letting it differ models ingestion of fresh corpus data
    # rather than near-duplicates of the hot queries.
    insert_workload: Optional[dict] = None

    engines: tuple = ("vanilla", "catapult")
    k_values: tuple = (16,)
    thread_counts: tuple = (1,)
    lsh_bits: int = 8
    bucket_capacity: int = 40
    max_degree: int = 48
    alpha: float = 1.2
    build_beam_width: int = 96
    insert_batch: Optional[int] = None
    insert_period: Optional[int] = None
    filter_label: Optional[int] = None
    seeds: tuple = (0, 1, 2)
    warmup_fraction: float = 0.10
    recall_sample: int = 1000
    recall_k: Optional[int] = None
    cache_capacity: int = 1024
    cache_tau: Optional[float] = None
    static_lsh_members: int = 8
    per_query_records: bool = False
    output: Optional[str] = None
    fmt: str = "json"

    # in-memory injection for tests and library callers (not serialized)
    dataset: Optional[VectorDataset] = None
    labels: Optional[LabelTable] = None
    queries: Optional[VectorDataset] = None
    graph: Optional[ProximityGraph] = None

    _MEM_FIELDS = ("dataset", "labels", "queries", "graph")

    def validate(self) -> None:
        if not self.engines:
            raise ConfigError("at least one engine is required")
        for name in self.engines:
            if name not in ENGINES:
                raise ConfigError(f"unknown engine {name!r}")
        if not self.k_values or not self.thread_counts:
            raise ConfigError("at least one (k, threads) combination is required")
        if any(k < 1 for k in self.k_values):
            raise ConfigError("k values must be positive")
        if any(t < 1 for t in self.thread_counts):
            raise ConfigError("thread counts must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must be in [0, 1)")
        if (self.insert_batch is None) != (self.insert_period is None):
            raise ConfigError("insert_batch and insert_period go together")
        if self.insert_batch is not None and (
            self.insert_batch < 1 or self.insert_period < 1
        ):
            raise ConfigError("insertion schedule values must be positive")
        has_dataset = self.dataset is not None or self.dataset_path is not None
        has_labels = self.labels is not None or self.labels_path is not None
        has_queries = self.queries is not None or self.queries_path is not None
        if not has_dataset:
            raise ConfigError("a dataset (path or object) is required")
        if not has_queries and self.workload is None:
            raise ConfigError("either queries or a workload spec is required")
        if self.workload is not None:
            mode = self.workload.get("mode")
            if mode in ("zipf-clustered", "shifted") and not has_dataset:
                raise ConfigError(f"{mode} workload requires a dataset for centroids")
        if self.filter_label is not None:
            if not has_labels:
                raise ConfigError("filter requires a label table")
            for name in self.engines:
                if name in ("lsh-entry", "cache"):
                    raise ConfigError(f"engine {name!r} does not support filtering")
        if "cache" in self.engines and any(t != 1 for t in self.thread_counts):
            raise ConfigError("the cache engine is single-threaded only")

    def echo(self) -> dict:
        """JSON-serializable view of the configuration."""
        out = {}
        for f in fields(self):
            if f.name in self._MEM_FIELDS:
                out[f"{f.name}_inline"] = getattr(self, f.name) is not None
                continue
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BenchConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        for key in ("engines", "k_values", "thread_counts", "seeds"):
            setattr(cfg, key, tuple(getattr(cfg, key)))
        return cfg


@dataclass
class RunRow:
    """Metrics for one (engine, k, threads, seed) replay."""

    engine: str
    k: int
    threads: int
    seed: int
    queries: int
    qps: float
    recall_mean: float
    recall_median: float
    nodes_visited_mean: float
    distance_computations_mean: float
    catapult_usage: float
    cache_hit_rate: Optional[float] = None


@dataclass
class MetricsReport:
    config: dict
    seeds: list
    rows: list
    aggregates: list
    per_query: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def aggregate_for(self, engine: str, k: int, threads: int) -> dict:
        for row in self.aggregates:
            if (row["engine"], row["k"], row["threads"]) == (engine, k, threads):
                return row
        raise KeyError((engine, k, threads))


def compute_recall(result_ids, truth_ids, k: int) -> float:
    """|result ∩ truth| / |truth| with both lists truncated to k."""
    truth_k = list(truth_ids)[:k]
    if not truth_k:
        return 1.0
    result_k = set(list(result_ids)[:k])
    return len(result_k & set(truth_k)) / len(truth_k)


def save_ground_truth(truth: list, k: int, path) -> None:
    """Binary truth file: u32 n, u32 k, then n*k little-endian int32 ids
    (-1 pads rows whose eligible set was smaller than k)."""
    n = len(truth)
    rows = np.full((n, k), -1, dtype="<i4")
    for i, ids in enumerate(truth):
        ids = list(ids)[:k]
        rows[i, : len(ids)] = ids
    with open(path, "wb") as f:
        f.write(np.array([n, k], dtype="<u4").tobytes())
        f.write(rows.tobytes())


def load_ground_truth(path) -> list:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated truth header")
    n, k = np.frombuffer(raw, dtype="<u4", count=2)
    expected = 8 + 4 * int(n) * int(k)
    if len(raw) != expected:
        raise ValueError(f"{path}: size mismatch, expected {expected} bytes")
    rows = np.frombuffer(raw, dtype="<i4", offset=8).reshape(int(n), int(k))
    return [row[row >= 0].tolist() for row in rows]


class _Records:
    """Per-query record arrays for one replay."""

    def __init__(self, m: int):
        self.nodes_visited = np.zeros(m, dtype=np.int64)
        self.distance_computations = np.zeros(m, dtype=np.int64)
        self.catapult_used = np.zeros(m, dtype=bool)
        self.cache_hit = np.full(m, -1, dtype=np.int8)
        self.dataset_size = np.zeros(m, dtype=np.int64)
        self.result_ids: list = [None] * m
        self.recall = np.full(m, np.nan)  # only sampled indices get filled

    def as_dict(self) -> dict:
        return {
            "nodes_visited": self.nodes_visited.tolist(),
            "distance_computations": self.distance_computations.tolist(),
            "catapult_used": self.catapult_used.tolist(),
            "cache_hit": self.cache_hit.tolist(),
            "dataset_size": self.dataset_size.tolist(),
            "recall": [None if np.isnan(r) else r for r in self.recall],
            "result_ids": [
                None if r is None else [int(v) for v in r] for r in self.result_ids
            ],
        }


def _run_span(lookup, queries: np.ndarray, k: int, lo: int, hi: int,
              threads: int, records: _Records) -> None:
    def one(i: int) -> None:
        res, stats = lookup(queries[i], k)
        records.nodes_visited[i] = stats.nodes_visited
        records.distance_computations[i] = stats.distance_computations
        records.catapult_used[i] = stats.catapult_used
        if stats.cache_hit is not None:
            records.cache_hit[i] = int(stats.cache_hit)
        records.result_ids[i] = res.ids

    if threads == 1:
        for i in range(lo, hi):
            one(i)
        return

    cursor = [lo]
    lock = threading.Lock()

    def worker():
        while True:
            with lock:
                i = cursor[0]
                if i >= hi:
                    return
                cursor[0] = i + 1
            one(i)

    pool = [threading.Thread(target=worker) for _ in range(threads)]
    for t in pool:
        t.start()
    for t in pool:
        t.join()


def _replay(lookup, queries: np.ndarray, k: int, threads: int, warmup_n: int,
            insert_period: Optional[int], apply_batch, dataset_count,
            ) -> tuple[_Records, float]:
    """Run the stream; returns records and the post-warmup wall time."""
    m = queries.shape[0]
    records = _Records(m)
    boundaries = {m}
    if warmup_n:
        boundaries.add(warmup_n)
    if insert_period:
        boundaries.update(range(insert_period, m, insert_period))
    measured = 0.0
    lo = 0
    for hi in sorted(boundaries):
        if hi > lo:
            records.dataset_size[lo:hi] = dataset_count()
            t0 = time.perf_counter()
            _run_span(lookup, queries, k, lo, hi, threads, records)
            dt = time.perf_counter() - t0
            if lo >= warmup_n:
                measured += dt
            lo = hi
        if insert_period and hi % insert_period == 0 and hi < m:
            apply_batch()
    return records, measured


def _copy_state(graph: ProximityGraph, dataset: VectorDataset,
                ) -> tuple[ProximityGraph, VectorDataset]:
    g = ProximityGraph(
        adj=graph.adj[: graph.count].copy(),
        deg=graph.deg[: graph.count].copy(),
        count=graph.count,
        dim=graph.dim,
        max_degree=graph.max_degree,
        medoid=graph.medoid,
        entry_points=None if graph.entry_points is None else dict(graph.entry_points),
    )
    return g, dataset.copy()


def _make_lookup(name: str, graph, dataset, labels, predicate, config,
                 seed: int, tau: Optional[float]):
    if predicate is not None:
        engine = FilteredCatapultEngine(
            graph, dataset, labels, lsh_bits=config.lsh_bits,
            bucket_capacity=config.bucket_capacity, seed=seed,
        )
        if name == "vanilla":
            return lambda q, k: engine.vanilla_lookup(q, k, predicate)
        if name == "catapult":
            return lambda q, k: engine.lookup(q, k, predicate)
        raise ConfigError(f"engine {name!r} does not support filtering")
    if name == "vanilla":
        return VanillaEngine(graph, dataset).lookup
    if name == "catapult":
        return CatapultEngine(
            graph, dataset, lsh_bits=config.lsh_bits,
            bucket_capacity=config.bucket_capacity, seed=seed,
        ).lookup
    if name == "lsh-entry":
        return StaticLshEngine(
            graph, dataset, lsh_bits=config.lsh_bits,
            members_per_bucket=config.static_lsh_members, seed=seed,
        ).lookup
    if name == "cache":
        return CachedEngine(
            graph, dataset, capacity=config.cache_capacity,
            tau=0.0 if tau is None else tau, lsh_bits=config.lsh_bits, seed=seed,
        ).lookup
    raise ConfigError(f"unknown engine {name!r}")


def _resolve_inputs(config: BenchConfig):
    dataset = config.dataset or load_vectors(config.dataset_path)
    labels = config.labels
    if labels is None and config.labels_path is not None:
        labels = load_labels(config.labels_path)
    return dataset, labels


def _resolve_queries(config: BenchConfig, dataset: VectorDataset, seed: int,
                     ) -> VectorDataset:
    if config.queries is not None:
        return config.queries
    if config.queries_path is not None:
        return load_vectors(config.queries_path)
    spec_args = dict(config.workload)
    spec_args["seed"] = int(spec_args.get("seed", 0)) + seed
    spec_args.setdefault("dim", dataset.dim)
    spec = WorkloadSpec(**spec_args)
    centroids = None
    if spec.mode in ("zipf-clustered", "shifted"):
        rng = np.random.default_rng(seed + 1234)
        pick = rng.choice(dataset.count, size=spec.cluster_count, replace=False)
        centroids = VectorDataset(dataset.values[np.sort(pick)].copy())
    return generate_workload(spec, centroids)


def _insert_pool(config: BenchConfig, dataset: VectorDataset, seed: int,
                 n_queries: int) -> Optional[np.ndarray]:
    if config.insert_batch is None or n_queries == 0:
        return None
    n_batches = (n_queries - 1) // config.insert_period
    total = n_batches * config.insert_batch
    if total == 0:
        return None
    source = config.insert_workload or config.workload
    if source is not None:
        spec_args = dict(source)
        spec_args["query_count"] = total
        spec_args["seed"] = int(spec_args.get("seed", 0)) + seed + 7777
        spec_args.setdefault("dim", dataset.dim)
        spec = WorkloadSpec(**spec_args)
        centroids = None
        if spec.mode in ("zipf-clustered", "shifted"):
            rng = np.random.default_rng(seed + 1234)
            pick = rng.choice(dataset.count, size=spec.cluster_count, replace=False)
            centroids = VectorDataset(dataset.values[np.sort(pick)].copy())
        return generate_workload(spec, centroids).values
    rng = np.random.default_rng(seed + 7777)
    return rng.uniform(-1, 1, size=(total, dataset.dim)).astype(np.float32)


def _resolve_graph(config: BenchConfig, dataset: VectorDataset,
                   labels: Optional[LabelTable]) -> ProximityGraph:
    if config.graph is not None:
        return config.graph
    if config.index_path is not None:
        graph = load_index(config.index_path)
        if config.filter_label is not None:
            raise ConfigError(
                "filtered runs need per-label entry points; build in-process"
            )
        return graph
    params = BuildParams(
        max_degree=config.max_degree, alpha=config.alpha,
        build_beam_width=config.build_beam_width, seed=config.seeds[0],
    )
    if config.filter_label is not None:
        return build_filtered_index(dataset, labels, params)
    return build_vamana(dataset, params)


def run_benchmark(config: BenchConfig) -> MetricsReport:
    """Replay the configured workload for every (engine, k, t, seed) combo."""
    config.validate()
    dataset, labels = _resolve_inputs(config)
    graph = _resolve_graph(config, dataset, labels)
    predicate = (
        None if config.filter_label is None
        else FilterPredicate([config.filter_label])
    )
    build_params = BuildParams(
        max_degree=config.max_degree, alpha=config.alpha,
        build_beam_width=config.build_beam_width, seed=config.seeds[0],
    )

    loaded_truth = None
    if config.truth_path is not None:
        if config.insert_batch is not None:
            raise ConfigError(
                "a precomputed truth file cannot serve insertion runs; "
                "recall needs the fresh oracle"
            )
        if config.queries is None and config.queries_path is None:
            raise ConfigError("truth_path requires a fixed query file")
        loaded_truth = load_ground_truth(config.truth_path)

    rows: list[RunRow] = []
    per_query: dict = {}
    for seed in config.seeds:
        queries = _resolve_queries(config, dataset, seed)
        m = queries.count
        warmup_n = int(m * config.warmup_fraction)
        pool = _insert_pool(config, dataset, seed, m)
        tau = config.cache_tau
        if tau is None and "cache" in config.engines and m >= 2:
            tau = calibrate_tau(
                queries.values[: max(warmup_n, 32)], percentile=5.0, seed=seed
            )

        sample_rng = np.random.default_rng(seed + 555)
        eligible_idx = np.arange(warmup_n, m)
        n_sample = min(config.recall_sample, eligible_idx.size)
        sample_idx = (
            np.sort(sample_rng.choice(eligible_idx, n_sample, replace=False))
            if n_sample else np.empty(0, dtype=np.int64)
        )
        # exact-truth memo shared by every run of this seed; runs under one
        # insertion schedule replay identical inserts, so (query, size) pins
        # the database state
        truth_cache: dict = {}
        k_cap = max(max(config.k_values), config.recall_k or 1)

        for engine_name in config.engines:
            for k in config.k_values:
                for t in config.thread_counts:
                    if pool is not None:
                        g_run, ds_run = _copy_state(graph, dataset)
                    else:
                        g_run, ds_run = graph, dataset
                    lookup = _make_lookup(
                        engine_name, g_run, ds_run, labels, predicate, config,
                        seed, tau,
                    )
                    pool_cursor = [0]

                    def apply_batch():
                        lo = pool_cursor[0]
                        hi = lo + config.insert_batch
                        for v in pool[lo:hi]:
                            insert(g_run, ds_run, v, build_params)
                        pool_cursor[0] = hi

                    records, measured = _replay(
                        lookup, queries.values, k, t, warmup_n,
                        config.insert_period if pool is not None else None,
                        apply_batch, lambda: ds_run.count,
                    )

                    recall_k = config.recall_k or k
                    recalls = []
                    for qi in sample_idx:
                        if loaded_truth is not None:
                            truth = loaded_truth[qi]
                        else:
                            key = (int(qi), int(records.dataset_size[qi]))
                            truth = truth_cache.get(key)
                            if truth is None:
                                truth = brute_force_knn(
                                    ds_run, queries.values[qi], k_cap,
                                    predicate=predicate, labels=labels,
                                    limit=int(records.dataset_size[qi]),
                                )
                                truth_cache[key] = truth
                        r = compute_recall(records.result_ids[qi], truth, recall_k)
                        recalls.append(r)
                        records.recall[qi] = r
                    measured_n = m - warmup_n
                    post = slice(warmup_n, m)
                    hits = records.cache_hit[post]
                    row = RunRow(
                        engine=engine_name, k=k, threads=t, seed=seed,
                        queries=measured_n,
                        qps=measured_n / measured if measured > 0 else 0.0,
                        recall_mean=float(np.mean(recalls)) if recalls else 0.0,
                        recall_median=float(np.median(recalls)) if recalls else 0.0,
                        nodes_visited_mean=(
                            float(records.nodes_visited[post].mean())
                            if measured_n else 0.0
                        ),
                        distance_computations_mean=(
                            float(records.distance_computations[post].mean())
                            if measured_n else 0.0
                        ),
                        catapult_usage=(
                            float(records.catapult_used[post].mean())
                            if measured_n else 0.0
                        ),
                        cache_hit_rate=(
                            float((hits == 1).mean()) if (hits >= 0).any() else None
                        ),
                    )
                    rows.append(row)
                    if config.per_query_records:
                        per_query[(engine_name, k, t, seed)] = records

    aggregates = _aggregate(rows)
    notes = []
    if config.filter_label is not None:
        notes.append(
            "per-label entry points are fixed at build time and not updated "
            "by insertions"
        )
    if config.insert_batch is not None:
        notes.append(
            "inserted vectors are unlabeled and ineligible for filtered runs"
        )
    return MetricsReport(
        config=config.echo(), seeds=list(config.seeds),
        rows=rows, aggregates=aggregates, per_query=per_query, notes=notes,
    )


_AGG_FIELDS = (
    "qps", "recall_mean", "recall_median", "nodes_visited_mean",
    "distance_computations_mean", "catapult_usage",
)


def _aggregate(rows: list) -> list:
    combos: dict[tuple, list] = {}
    for row in rows:
        combos.setdefault((row.engine, row.k, row.threads), []).append(row)
    out = []
    for (engine, k, t), group in combos.items():
        agg = {"engine": engine, "k": k, "threads": t,
               "seeds": [r.seed for r in group],
               "queries": int(np.sum([r.queries for r in group]))}
        for name in _AGG_FIELDS:
            agg[name] = float(np.mean([getattr(r, name) for r in group]))
        hit_rates = [r.cache_hit_rate for r in group if r.cache_hit_rate is not None]
        agg["cache_hit_rate"] = float(np.mean(hit_rates)) if hit_rates else None
        out.append(agg)
    return out


_CSV_COLUMNS = (
    "engine", "k", "threads", "seeds", "queries", "qps", "recall_mean",
    "recall_median", "nodes_visited_mean", "distance_computations_mean",
    "catapult_usage", "cache_hit_rate",
)


def emit_report(report: MetricsReport, fmt: str, path) -> None:
    """Write the report: stable field order; CSV has one aggregate row per
    (engine, k, t), JSON echoes the config, seed list and per-seed rows."""
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(_CSV_COLUMNS)
            for agg in report.aggregates:
                row = dict(agg)
                row["seeds"] = "|".join(str(s) for s in row["seeds"])
                writer.writerow(
                    ["" if row[c] is None else row[c] for c in _CSV_COLUMNS]
                )
        return
    if fmt == "json":
        payload = {
            "config": report.config,
            "seeds": report.seeds,
            "notes": report.notes,
            "rows": [asdict(r) for r in report.rows],
            "aggregates": report.aggregates,
        }
        if report.per_query:
            payload["per_query"] = {
                f"{e}|k={k}|t={t}|seed={s}": rec.as_dict()
                for (e, k, t, s), rec in report.per_query.items()
            }
        with open(path, "w") as f:
            json.dump(payload, f, indent=1)
        return
    raise ValueError(f"unknown report format {fmt!r}")
