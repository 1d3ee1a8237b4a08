import numpy as np
import pytest

from catann.vecstore import (
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
    zipf_weights,
)


class TestDistance:
    def test_identity_is_zero(self):
        assert distance(np.zeros(2), np.zeros(2)) == 0.0

    def test_unit_case(self):
        assert distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 2.0

    def test_hand_evaluated(self):
        # (0.5 - (-0.1))^2 + (-0.3 - 0.2)^2 = 0.36 + 0.25
        a = np.array([0.5, -0.3])
        b = np.array([-0.1, 0.2])
        expected = 0.6**2 + 0.5**2
        assert distance(a, b) == pytest.approx(expected, abs=1e-12)

    def test_euclidean_is_sqrt_of_squared(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.normal(size=8)
            b = rng.normal(size=8)
            assert distance(a, b, "euclidean") == pytest.approx(
                np.sqrt(distance(a, b)), rel=1e-12
            )

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for metric in ("squared-euclidean", "euclidean", "cosine"):
            for _ in range(20):
                a = rng.normal(size=6)
                b = rng.normal(size=6)
                assert distance(a, b, metric) == distance(b, a, metric)

    def test_cosine_parallel_and_opposite(self):
        a = np.array([1.0, 0.0])
        assert distance(a, 3 * a, "cosine") == pytest.approx(0.0, abs=1e-12)
        assert distance(a, -a, "cosine") == pytest.approx(2.0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            distance(np.zeros(3), np.zeros(4))

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            distance(np.zeros(2), np.zeros(2), "manhattan")


class TestDataset:
    def test_append_assigns_sequential_ids(self):
        ds = VectorDataset.empty(3)
        assert ds.append(np.ones(3)) == 0
        assert ds.append(np.zeros(3)) == 1
        assert ds.count == 2
        np.testing.assert_array_equal(ds.get(0), np.ones(3, dtype=np.float32))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            VectorDataset(np.array([[np.nan, 0.0]]))
        ds = VectorDataset.empty(2)
        with pytest.raises(ValueError):
            ds.append(np.array([np.inf, 0.0]))

    def test_append_dim_mismatch(self):
        ds = VectorDataset.empty(2)
        with pytest.raises(ValueError):
            ds.append(np.zeros(3))

    def test_values_view_tracks_growth(self):
        ds = VectorDataset.empty(2)
        for i in range(40):
            ds.append(np.full(2, i, dtype=np.float32))
        assert ds.values.shape == (40, 2)
        assert ds.values[39, 0] == 39.0


class TestVectorIO:
    def test_empty_dataset_roundtrip(self, tmp_path):
        path = tmp_path / "empty.bin"
        save_vectors(VectorDataset.empty(8), path)
        ds = load_vectors(path)
        assert ds.count == 0
        assert ds.dim == 8

    def test_roundtrip_identity(self, tmp_path):
        rng = np.random.default_rng(7)
        original = VectorDataset(rng.normal(size=(100, 16)).astype(np.float32))
        path = tmp_path / "v.bin"
        save_vectors(original, path)
        loaded = load_vectors(path)
        np.testing.assert_array_equal(loaded.values, original.values)

    def test_truncated_payload_raises(self, tmp_path):
        path = tmp_path / "v.bin"
        save_vectors(VectorDataset(np.ones((4, 4), dtype=np.float32)), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(FormatError):
            load_vectors(path)

    def test_header_size_mismatch_raises(self, tmp_path):
        path = tmp_path / "v.bin"
        save_vectors(VectorDataset(np.ones((4, 4), dtype=np.float32)), path)
        raw = bytearray(path.read_bytes())
        raw[0:4] = (99).to_bytes(4, "little")  # claim n=99, payload stays 4x4
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_vectors(path)

    def test_truncated_header_raises(self, tmp_path):
        path = tmp_path / "v.bin"
        path.write_bytes(b"\x01\x00")
        with pytest.raises(FormatError):
            load_vectors(path)


class TestLabels:
    def test_roundtrip(self, tmp_path):
        table = LabelTable([[0, 2], [], [1]])
        path = tmp_path / "labels.txt"
        save_labels(table, path)
        loaded = load_labels(path)
        assert len(loaded) == 3
        assert loaded.for_node(0) == frozenset({0, 2})
        assert loaded.for_node(1) == frozenset()
        assert loaded.for_node(2) == frozenset({1})

    def test_inverted_index(self):
        table = LabelTable([[0], [0, 1], [1]])
        np.testing.assert_array_equal(table.nodes_with_label(0), [0, 1])
        np.testing.assert_array_equal(table.nodes_with_label(1), [1, 2])

    def test_negative_label_rejected(self):
        with pytest.raises(ValueError):
            LabelTable([[-1]])

    def test_csr(self):
        indptr, flat = LabelTable([[2, 0], [], [1]]).as_csr()
        np.testing.assert_array_equal(indptr, [0, 2, 2, 3])
        np.testing.assert_array_equal(flat, [0, 2, 1])


class TestWorkload:
    def test_zipf_pmf_ratio(self):
        # rank-1 over rank-2 selection probability must equal 2^s
        w = zipf_weights(16, 0.8)
        assert w[0] / w[1] == pytest.approx(2**0.8, rel=1e-12)
        assert w.sum() == pytest.approx(1.0, rel=1e-12)

    def test_uniform_bounds(self):
        spec = WorkloadSpec(mode="uniform", query_count=1000, dim=4, seed=3)
        q = generate_workload(spec)
        assert q.values.shape == (1000, 4)
        assert (q.values >= -1).all() and (q.values <= 1).all()

    def test_determinism(self):
        spec = WorkloadSpec(mode="uniform", query_count=200, dim=8, seed=11)
        a = generate_workload(spec)
        b = generate_workload(spec)
        np.testing.assert_array_equal(a.values, b.values)

    def test_clustered_determinism(self):
        rng = np.random.default_rng(5)
        cents = VectorDataset(rng.normal(size=(8, 6)).astype(np.float32))
        spec = WorkloadSpec(
            mode="zipf-clustered", query_count=500, dim=6, cluster_count=8, seed=9
        )
        a = generate_workload(spec, cents)
        b = generate_workload(spec, cents)
        np.testing.assert_array_equal(a.values, b.values)

    def test_missing_centroids_rejected(self):
        spec = WorkloadSpec(
            mode="zipf-clustered", query_count=10, dim=4, cluster_count=4
        )
        with pytest.raises(ValueError):
            generate_workload(spec)

    def test_too_few_centroids_rejected(self):
        cents = VectorDataset(np.zeros((2, 4), dtype=np.float32))
        spec = WorkloadSpec(
            mode="zipf-clustered", query_count=10, dim=4, cluster_count=4
        )
        with pytest.raises(ValueError):
            generate_workload(spec, cents)

    def _cluster_counts(self, queries, cents):
        # assign each query to its nearest centroid
        d = (
            np.linalg.norm(
                queries.values[:, None, :] - cents.values[None, :, :], axis=2
            )
        )
        assign = d.argmin(axis=1)
        return np.bincount(assign, minlength=cents.count)

    def test_zipf_rank_histogram(self):
        # deterministic given the pinned seed; see spec invariant on frequency ranks
        rng = np.random.default_rng(2)
        cents = VectorDataset((rng.normal(size=(8, 16)) * 4).astype(np.float32))
        spec = WorkloadSpec(
            mode="zipf-clustered",
            query_count=50_000,
            dim=16,
            cluster_count=8,
            cluster_stddev=0.05,
            zipf_s=0.8,
            seed=42,
        )
        q = generate_workload(spec, cents)
        counts = np.sort(self._cluster_counts(q, cents))[::-1]
        assert (np.diff(counts) <= 0).all()
        ratio = counts[0] / counts[1]
        assert abs(ratio - 2**0.8) / 2**0.8 <= 0.15

    def test_shifted_repermutes_clusters(self):
        rng = np.random.default_rng(4)
        cents = VectorDataset((rng.normal(size=(8, 16)) * 4).astype(np.float32))
        base = dict(
            query_count=4000, dim=16, cluster_count=8, cluster_stddev=0.01, seed=21
        )
        shifted = generate_workload(
            WorkloadSpec(mode="shifted", shift_point=2000, **base), cents
        )
        plain = generate_workload(WorkloadSpec(mode="zipf-clustered", **base), cents)
        np.testing.assert_array_equal(
            shifted.values[:2000], plain.values[:2000]
        )
        pre = self._cluster_counts(
            VectorDataset(shifted.values[:2000].copy()), cents
        )
        post = self._cluster_counts(
            VectorDataset(shifted.values[2000:].copy()), cents
        )
        # hottest cluster moves when the rank permutation is redrawn
        assert pre.argmax() != post.argmax()

    def test_shift_point_validation(self):
        with pytest.raises(ValueError):
            WorkloadSpec(mode="shifted", query_count=10, dim=2, shift_point=10)


class TestBruteForce:
    def test_nearest_forced(self):
        ds = VectorDataset(np.array([[0, 0], [1, 1], [2, 2]], dtype=np.float32))
        assert brute_force_knn(ds, np.array([0.1, 0.1]), 1) == [0]

    def test_k_larger_than_dataset(self):
        ds = VectorDataset(np.array([[0, 0], [1, 1], [2, 2]], dtype=np.float32))
        assert brute_force_knn(ds, np.array([0.1, 0.1]), 5) == [0, 1, 2]

    def test_tie_broken_by_lower_id(self):
        ds = VectorDataset(
            np.array([[5, 5], [1, 1], [1, 1], [0, 0]], dtype=np.float32)
        )
        assert brute_force_knn(ds, np.array([1.0, 1.0]), 3) == [1, 2, 3]

    def test_predicate_filters_results(self):
        ds = VectorDataset(np.array([[0, 0], [1, 0], [2, 0]], dtype=np.float32))
        labels = LabelTable([[0], [1], [1]])
        got = brute_force_knn(ds, np.array([0.0, 0.0]), 2, predicate={1}, labels=labels)
        assert got == [1, 2]

    def test_predicate_without_labels_rejected(self):
        ds = VectorDataset(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            brute_force_knn(ds, np.zeros(2), 1, predicate={0})

    def test_ordering_invariant(self):
        rng = np.random.default_rng(8)
        ds = VectorDataset(rng.normal(size=(300, 8)).astype(np.float32))
        for _ in range(20):
            q = rng.normal(size=8)
            ids = brute_force_knn(ds, q, 25)
            dists = [distance(ds.get(i), q) for i in ids]
            for a, b in zip(range(len(ids) - 1), range(1, len(ids))):
                assert dists[a] <= dists[b]
                if dists[a] == dists[b]:
                    assert ids[a] < ids[b]

    def test_k_validation(self):
        ds = VectorDataset(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            brute_force_knn(ds, np.zeros(2), 0)
