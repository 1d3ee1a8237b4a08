"""Command line interface: build indices, generate workloads, compute ground
truth, and run benchmarks.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bench import (
    BenchConfig,
    ConfigError,
    emit_report,
    run_benchmark,
    save_ground_truth,
)
from .filtering import build_filtered_index
from .graph import BuildParams, build_vamana, save_index
from .vecstore import (
    VectorDataset,
    WorkloadSpec,
    brute_force_knn,
    generate_workload,
    load_labels,
    load_vectors,
    save_vectors,
)


def _int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def _cmd_build(args) -> int:
    dataset = load_vectors(args.dataset)
    params = BuildParams(max_degree=args.max_degree, alpha=args.alpha,
                         build_beam_width=args.beam_width, seed=args.seed)
    if args.labels:
        labels = load_labels(args.labels)
        graph = build_filtered_index(dataset, labels, params)
    else:
        graph = build_vamana(dataset, params)
    save_index(graph, args.output)
    print(f"built index over {dataset.count} vectors (dim {dataset.dim}, "
          f"R {args.max_degree}, medoid {graph.medoid}) -> {args.output}")
    return 0


def _cmd_gen_workload(args) -> int:
    spec = WorkloadSpec(
        mode=args.mode, query_count=args.count, dim=args.dim,
        zipf_s=args.zipf_s, cluster_count=args.clusters,
        cluster_stddev=args.cluster_stddev, shift_point=args.shift_point,
        seed=args.seed,
    )
    centroids = None
    if spec.mode in ("zipf-clustered", "shifted"):
        if not args.centroids:
            print("error: clustered modes need --centroids <dataset>", file=sys.stderr)
            return 2
        source = load_vectors(args.centroids)
        rng = np.random.default_rng(args.seed + 1234)
        pick = np.sort(rng.choice(source.count, size=spec.cluster_count,
                                  replace=False))
        centroids = VectorDataset(source.values[pick].copy())
    queries = generate_workload(spec, centroids)
    save_vectors(queries, args.output)
    print(f"wrote {queries.count} {args.mode} queries (dim {queries.dim}) "
          f"-> {args.output}")
    return 0


def _cmd_ground_truth(args) -> int:
    dataset = load_vectors(args.dataset)
    queries = load_vectors(args.queries)
    labels = load_labels(args.labels) if args.labels else None
    predicate = {args.filter} if args.filter is not None else None
    truth = [
        brute_force_knn(dataset, queries.values[i], args.k,
                        predicate=predicate, labels=labels)
        for i in range(queries.count)
    ]
    save_ground_truth(truth, args.k, args.output)
    print(f"wrote exact top-{args.k} for {queries.count} queries -> {args.output}")
    return 0


def _cmd_bench(args) -> int:
    if args.config:
        with open(args.config) as f:
            config = BenchConfig.from_dict(json.load(f))
        if args.output:
            config.output = args.output
        if args.format:
            config.fmt = args.format
    else:
        workload = None
        if not args.queries:
            workload = {
                "mode": args.workload_mode, "query_count": args.workload_count,
                "zipf_s": args.zipf_s, "cluster_count": args.clusters,
                "cluster_stddev": args.cluster_stddev, "seed": 0,
            }
        config = BenchConfig(
            dataset_path=args.dataset, labels_path=args.labels,
            queries_path=args.queries, index_path=args.index,
            truth_path=args.truth, workload=workload,
            engines=tuple(args.engine), k_values=args.k,
            thread_counts=args.threads, lsh_bits=args.lsh_bits,
            bucket_capacity=args.bucket_capacity, max_degree=args.max_degree,
            alpha=args.alpha, build_beam_width=args.beam_width,
            insert_batch=args.insert_batch, insert_period=args.insert_period,
            filter_label=args.filter,
            seeds=tuple(range(args.seed, args.seed + args.num_seeds)),
            warmup_fraction=args.warmup, recall_sample=args.recall_sample,
            cache_capacity=args.cache_capacity, cache_tau=args.cache_tau,
            output=args.output, fmt=args.format or "json",
        )
    try:
        config.validate()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = run_benchmark(config)
    for agg in report.aggregates:
        hit = ("" if agg["cache_hit_rate"] is None
               else f"  hit_rate={agg['cache_hit_rate']:.3f}")
        print(f"{agg['engine']:>9s} k={agg['k']:<3d} t={agg['threads']:<2d} "
              f"qps={agg['qps']:10.1f}  recall={agg['recall_mean']:.4f}  "
              f"visited={agg['nodes_visited_mean']:8.1f}  "
              f"usage={agg['catapult_usage']:.3f}{hit}")
    if config.output:
        emit_report(report, config.fmt, config.output)
        print(f"report -> {config.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catann",
        description="Graph ANN engine with catapult entry points: build, "
                    "workload generation, ground truth, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build an index file from a vector file")
    p.add_argument("dataset")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--labels", help="label file; enables the label-aware build")
    p.add_argument("--max-degree", type=int, default=48)
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--beam-width", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("gen-workload", help="generate a synthetic query stream")
    p.add_argument("--mode", choices=("uniform", "zipf-clustered", "shifted"),
                   default="uniform")
    p.add_argument("--count", type=int, default=20000)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--zipf-s", type=float, default=0.8)
    p.add_argument("--clusters", type=int, default=64)
    p.add_argument("--cluster-stddev", type=float, default=0.05)
    p.add_argument("--shift-point", type=int, default=None)
    p.add_argument("--centroids", help="dataset file to sample centroids from")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=_cmd_gen_workload)

    p = sub.add_parser("ground-truth", help="exact k-NN ids for a query file")
    p.add_argument("dataset")
    p.add_argument("queries")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--labels")
    p.add_argument("--filter", type=int, default=None)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=_cmd_ground_truth)

    p = sub.add_parser("bench", help="replay a workload across engines")
    p.add_argument("--config", help="JSON file mirroring the bench config")
    p.add_argument("--dataset")
    p.add_argument("--queries")
    p.add_argument("--labels")
    p.add_argument("--index")
    p.add_argument("--truth")
    p.add_argument("--engine", action="append", default=None,
                   choices=("vanilla", "catapult", "lsh-entry", "cache"))
    p.add_argument("--k", type=_int_list, default=(16,))
    p.add_argument("--threads", type=_int_list, default=(1,))
    p.add_argument("--lsh-bits", type=int, default=8)
    p.add_argument("--bucket-capacity", type=int, default=40)
    p.add_argument("--max-degree", type=int, default=48)
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--beam-width", type=int, default=96)
    p.add_argument("--insert-batch", type=int, default=None)
    p.add_argument("--insert-period", type=int, default=None)
    p.add_argument("--filter", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-seeds", type=int, default=3)
    p.add_argument("--warmup", type=float, default=0.10)
    p.add_argument("--recall-sample", type=int, default=1000)
    p.add_argument("--cache-capacity", type=int, default=1024)
    p.add_argument("--cache-tau", type=float, default=None)
    p.add_argument("--workload-mode", default="uniform",
                   choices=("uniform", "zipf-clustered", "shifted"))
    p.add_argument("--workload-count", type=int, default=20000)
    p.add_argument("--zipf-s", type=float, default=0.8)
    p.add_argument("--clusters", type=int, default=64)
    p.add_argument("--cluster-stddev", type=float, default=0.05)
    p.add_argument("--output", "-o", default=None)
    p.add_argument("--format", choices=("json", "csv"), default=None)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "engine", None) is not None and not args.engine:
        args.engine = ["vanilla", "catapult"]
    if args.command == "bench" and args.engine is None:
        args.engine = ["vanilla", "catapult"]
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
