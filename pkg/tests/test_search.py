import numpy as np
import pytest

from catann import _kernels
from catann.graph import BuildParams, ProximityGraph, build_vamana, insert
from catann.search import beam_search
from catann.vecstore import VectorDataset, brute_force_knn, distance

from test_graph import gaussian_mixture


@pytest.fixture(scope="module")
def built():
    ds, cents = gaussian_mixture(1000, 10, 6, seed=20)
    g = build_vamana(ds, BuildParams(max_degree=16, build_beam_width=32, seed=20))
    return g, ds, cents


def test_single_node_graph():
    ds = VectorDataset.empty(4)
    g = ProximityGraph.empty(4, max_degree=4)
    insert(g, ds, np.ones(4), BuildParams(max_degree=4))
    res, stats = beam_search(g, ds, np.zeros(4), 1, [0])
    np.testing.assert_array_equal(res.ids, [0])
    assert stats.hops == 1
    assert stats.nodes_visited == 1


def test_twin_in_sp_is_retained(built):
    g, ds, _ = built
    res, _ = beam_search(g, ds, ds.get(77), 4, [77, g.medoid])
    assert res.ids[0] == 77
    assert res.distances[0] == 0.0


def test_oracle_containment(built):
    # every returned id should appear in the oracle's top-50 almost always
    g, ds, cents = built
    rng = np.random.default_rng(21)
    ok = 0
    for _ in range(100):
        q = (cents[rng.integers(0, 6)] + rng.normal(0, 0.2, 10)).astype(np.float32)
        res, _ = beam_search(g, ds, q, 10, [g.medoid])
        truth = set(brute_force_knn(ds, q, 50))
        if set(res.ids.tolist()) <= truth:
            ok += 1
    assert ok >= 95


def test_top1_never_worse_than_best_sp(built):
    g, ds, _ = built
    rng = np.random.default_rng(22)
    for _ in range(50):
        q = rng.normal(0, 0.6, 10).astype(np.float32)
        sp = rng.choice(ds.count, size=5, replace=False).tolist()
        res, _ = beam_search(g, ds, q, 1, sp)
        best_sp = min(distance(q, ds.get(s)) for s in sp)
        assert res.distances[0] <= best_sp * (1 + 1e-12)


def test_results_subset_of_visited_and_sp(built):
    # white-box: the kernel exposes its visit log
    g, ds, _ = built
    rng = np.random.default_rng(23)
    stamp = np.zeros(ds.count, dtype=np.int32)
    for trial in range(20):
        q = rng.normal(0, 0.6, 10).astype(np.float32)
        sp = np.array([g.medoid, int(rng.integers(0, ds.count))], dtype=np.int64)
        ids, dists, hops, dcomp, visit_ids, _ = _kernels.beam_search(
            ds.values, g.adj, g.deg, q, 8, sp, stamp, trial + 1,
            _kernels.NO_FILTER,
        )
        allowed = set(visit_ids.tolist()) | set(sp.tolist())
        neighbors_of_visited = set()
        for v in visit_ids:
            neighbors_of_visited |= set(g.neighbors(int(v)).tolist())
        assert set(ids.tolist()) <= allowed | neighbors_of_visited


def test_sorted_by_distance_then_id(built):
    g, ds, _ = built
    rng = np.random.default_rng(24)
    for _ in range(20):
        q = rng.normal(0, 0.6, 10).astype(np.float32)
        res, _ = beam_search(g, ds, q, 16, [g.medoid])
        d = res.distances
        assert (np.diff(d) >= 0).all()
        for i in range(len(d) - 1):
            if d[i] == d[i + 1]:
                assert res.ids[i] < res.ids[i + 1]


def test_determinism(built):
    g, ds, _ = built
    q = np.full(10, 0.25, dtype=np.float32)
    r1, s1 = beam_search(g, ds, q, 8, [g.medoid])
    r2, s2 = beam_search(g, ds, q, 8, [g.medoid])
    np.testing.assert_array_equal(r1.ids, r2.ids)
    np.testing.assert_array_equal(r1.distances, r2.distances)
    assert s1.nodes_visited == s2.nodes_visited
    assert s1.distance_computations == s2.distance_computations


def test_stats_invariants(built):
    g, ds, _ = built
    rng = np.random.default_rng(25)
    for _ in range(20):
        q = rng.normal(0, 0.6, 10).astype(np.float32)
        _, stats = beam_search(g, ds, q, 4, [g.medoid])
        assert stats.nodes_visited == stats.hops
        assert stats.distance_computations >= stats.nodes_visited
        assert stats.elapsed > 0


def test_result_never_exceeds_k(built):
    g, ds, _ = built
    res, _ = beam_search(g, ds, np.zeros(10, dtype=np.float32), 3, [g.medoid])
    assert len(res) <= 3


def test_duplicate_sp_collapsed(built):
    g, ds, _ = built
    q = np.full(10, -0.1, dtype=np.float32)
    r1, s1 = beam_search(g, ds, q, 4, [g.medoid, g.medoid, g.medoid])
    r2, s2 = beam_search(g, ds, q, 4, [g.medoid])
    np.testing.assert_array_equal(r1.ids, r2.ids)
    assert s1.distance_computations == s2.distance_computations


def test_errors(built):
    g, ds, _ = built
    with pytest.raises(ValueError):
        beam_search(g, ds, np.zeros(10), 1, [])
    with pytest.raises(ValueError):
        beam_search(g, ds, np.zeros(10), 1, [ds.count + 5])
    with pytest.raises(ValueError):
        beam_search(g, ds, np.zeros(10), 0, [g.medoid])
    with pytest.raises(ValueError):
        beam_search(g, ds, np.zeros(9), 1, [g.medoid])
