import numpy as np
import pytest

from omcfl.data import (
    Dataset,
    class_means,
    load_csv,
    partition_by_label,
    partition_iid,
    save_csv,
    synth_clusters,
)
from omcfl.errors import InvalidConfigError, InvalidInputError


def sample_counts(shards):
    return [len(s) for s in shards]


def as_row_set(dataset):
    rows = np.concatenate(
        [dataset.features, dataset.labels[:, None].astype(np.float32)], axis=1
    )
    return {tuple(row) for row in rows}


class TestSynthClusters:
    def test_zero_spread_hits_class_means(self):
        ds = synth_clusters(4, 8, 100, 0.0, seed=1)
        means = class_means(4, 8)
        assert np.array_equal(ds.features, means[ds.labels])

    def test_label_histogram_near_uniform(self):
        ds = synth_clusters(4, 8, 10_000, 0.3, seed=2)
        counts = np.bincount(ds.labels, minlength=4)
        assert np.all(np.abs(counts - 2500) / 2500 < 0.05)

    def test_deterministic(self):
        a = synth_clusters(3, 5, 64, 0.2, seed=9)
        b = synth_clusters(3, 5, 64, 0.2, seed=9)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_more_classes_than_dims(self):
        ds = synth_clusters(10, 3, 50, 0.0, seed=0)
        means = class_means(10, 3)
        assert len(np.unique(means, axis=0)) == 10
        assert np.array_equal(ds.features, means[ds.labels])

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            synth_clusters(0, 4, 10, 0.1, 0)


class TestBatch:
    def test_cyclic_slice(self):
        ds = synth_clusters(2, 2, 10, 0.1, seed=3)
        batch = ds.batch(8, 4)  # wraps to 8, 9, 0, 1
        assert np.array_equal(batch.features[0], ds.features[8])
        assert np.array_equal(batch.features[2], ds.features[0])

    def test_empty_rejected(self):
        ds = synth_clusters(2, 2, 4, 0.1, seed=3).subset(np.array([], dtype=int))
        with pytest.raises(InvalidInputError):
            ds.batch(0, 2)


class TestIidPartition:
    def test_equal_shards(self):
        ds = synth_clusters(4, 4, 100, 0.2, seed=5)
        shards = partition_iid(ds, 4, seed=6)
        assert sample_counts(shards) == [25, 25, 25, 25]

    def test_sizes_differ_by_at_most_one(self):
        ds = synth_clusters(4, 4, 103, 0.2, seed=5)
        counts = sample_counts(partition_iid(ds, 4, seed=6))
        assert max(counts) - min(counts) <= 1
        assert sum(counts) == 103

    def test_union_is_original(self):
        ds = synth_clusters(3, 4, 200, 0.2, seed=7)
        shards = partition_iid(ds, 5, seed=8)
        union = set()
        for shard in shards:
            rows = as_row_set(shard)
            assert not (union & rows)  # disjoint
            union |= rows
        assert union == as_row_set(ds)

    def test_shard_label_histograms_near_global(self):
        ds = synth_clusters(4, 4, 10_000, 0.2, seed=9)
        global_frac = np.bincount(ds.labels, minlength=4) / len(ds)
        for shard in partition_iid(ds, 4, seed=10):
            frac = np.bincount(shard.labels, minlength=4) / len(shard)
            assert np.all(np.abs(frac - global_frac) <= 0.1 * global_frac)


class TestByLabelPartition:
    def test_single_label_per_client(self):
        ds = synth_clusters(4, 4, 400, 0.2, seed=11)
        shards = partition_by_label(ds, 4, 1, seed=12)
        for shard in shards:
            assert len(np.unique(shard.labels)) == 1
        labels = sorted(int(s.labels[0]) for s in shards)
        assert labels == [0, 1, 2, 3]

    def test_label_budget_respected_over_many_configs(self):
        rng = np.random.default_rng(13)
        for trial in range(100):
            k = int(rng.integers(2, 8))
            clients = int(rng.integers(1, 10))
            budget = int(rng.integers(1, k + 1))
            if clients * budget < k:
                continue
            ds = synth_clusters(k, 4, 300, 0.2, seed=trial)
            shards = partition_by_label(ds, clients, budget, seed=trial)
            for shard in shards:
                assert len(np.unique(shard.labels)) <= budget

    def test_union_and_disjoint(self):
        ds = synth_clusters(5, 4, 500, 0.2, seed=14)
        shards = partition_by_label(ds, 5, 2, seed=15)
        union = set()
        for shard in shards:
            rows = as_row_set(shard)
            assert not (union & rows)
            union |= rows
        assert union == as_row_set(ds)

    def test_full_budget_degenerates_to_iid_like(self):
        ds = synth_clusters(4, 4, 800, 0.2, seed=16)
        shards = partition_by_label(ds, 4, 4, seed=17)
        assert sum(sample_counts(shards)) == 800
        for shard in shards:
            assert len(np.unique(shard.labels)) >= 2

    def test_infeasible_config_rejected(self):
        ds = synth_clusters(8, 4, 100, 0.2, seed=18)
        with pytest.raises(InvalidConfigError):
            partition_by_label(ds, 2, 3, seed=19)  # 6 slots < 8 classes


class TestCsv:
    def test_roundtrip_exact(self, tmp_path):
        ds = synth_clusters(3, 5, 64, 0.4, seed=20)
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        loaded = load_csv(path)
        assert np.array_equal(loaded.features, ds.features)
        assert np.array_equal(loaded.labels, ds.labels)
        assert loaded.num_classes == 3

    def test_header_format(self, tmp_path):
        ds = synth_clusters(2, 3, 4, 0.1, seed=21)
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        header = path.read_text().splitlines()[0]
        assert header == "f0,f1,f2,label"
