"""In-memory graph ANN engine with workload-adaptive catapult entry points.

Queries hash into LSH buckets; each bucket keeps an LRU list of recent best
results which seed future beam searches in the same region, alongside the
graph medoid. Includes vanilla, static-LSH-entry and approximate-cache
baselines plus a benchmark harness.
"""

from .baselines import (
    ApproxCache,
    CachedEngine,
    StaticLshEngine,
    StaticLshIndex,
    VanillaEngine,
    cache_lookup,
    calibrate_tau,
)
from .bench import (
    BenchConfig,
    ConfigError,
    MetricsReport,
    RunRow,
    compute_recall,
    emit_report,
    load_ground_truth,
    run_benchmark,
    save_ground_truth,
)
from .catapult import CatapultEngine, CatapultTable, HyperplaneHasher
from .filtering import (
    FilterPredicate,
    FilteredCatapultEngine,
    build_filtered_index,
    eligibility_mask,
    entry_points_for,
    filtered_beam_search,
)
from .graph import (
    BuildParams,
    ProximityGraph,
    build_vamana,
    compute_medoid,
    insert,
    load_index,
    robust_prune,
    save_index,
)
from .search import QueryStats, SearchResult, beam_search
from .vecstore import (
    FormatError,
    LabelTable,
    VectorDataset,
    WorkloadSpec,
    brute_force_knn,
    distance,
    generate_workload,
    load_labels,
    load_vectors,
    save_labels,
    save_vectors,
)

__version__ = "0.1.0"
