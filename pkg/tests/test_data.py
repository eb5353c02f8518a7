import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drlfl import data
from drlfl.data import Dataset, PartitionPlan


def idx_pair(tmp_path, image_magic=0x803, n_images=2, n_labels=2, pixels=b"\x00\xff", labels=b"\x07\x03"):
    img, lbl = tmp_path / "img.idx", tmp_path / "lbl.idx"
    img.write_bytes(struct.pack(">IIII", image_magic, n_images, 1, 1) + pixels)
    lbl.write_bytes(struct.pack(">II", 0x801, n_labels) + labels)
    return img, lbl


def test_load_idx_hand_built(tmp_path):
    ds = data.load_idx(*idx_pair(tmp_path))
    assert ds.features.tolist() == [[0.0], [1.0]]
    assert ds.labels.tolist() == [7, 3]


def test_load_idx_bad_magic(tmp_path):
    img, lbl = idx_pair(tmp_path, image_magic=0x802)
    with pytest.raises(data.BadMagicError, match="bad magic") as exc:
        data.load_idx(img, lbl)
    assert exc.value.path == str(img)


def test_load_idx_count_mismatch(tmp_path):
    img, lbl = idx_pair(tmp_path, n_images=3, pixels=b"\x00\xff\x10")
    with pytest.raises(data.CountMismatchError):
        data.load_idx(img, lbl)


def test_load_idx_truncated(tmp_path):
    img, lbl = idx_pair(tmp_path, pixels=b"\x00")
    with pytest.raises(data.TruncatedIdxError) as exc:
        data.load_idx(img, lbl)
    assert exc.value.path == str(img)


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.integers(0, 256, (20, 6)) / 255.0, rng.integers(0, 10, 20), 10)
    data.write_idx(ds, tmp_path / "i", tmp_path / "l", rows=2, cols=3)
    back = data.load_idx(tmp_path / "i", tmp_path / "l", 10)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)


def test_dataset_cache_round_trip(tmp_path):
    ds = data.generate_synthetic(3, 4, 5, 2.0, 0)
    data.save_dataset(tmp_path / "d.bin", ds)
    raw = (tmp_path / "d.bin").read_bytes()
    assert raw[:4] == b"DSET" and struct.unpack_from("<III", raw, 4) == (12, 5, 3)
    back = data.load_dataset(tmp_path / "d.bin")
    assert np.array_equal(back.features, ds.features) and np.array_equal(back.labels, ds.labels)
    (tmp_path / "d.bin").write_bytes(raw[:-1])
    with pytest.raises(ValueError):
        data.load_dataset(tmp_path / "d.bin")


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), [0, 1], 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(ValueError):
        data.ClientDataset(0, [1, 1], Dataset(np.zeros((2, 1)), [0, 0], 1))


def test_synthetic_counts_and_determinism():
    ds = data.generate_synthetic(3, 5, 4, 3.0, seed=1)
    assert len(ds) == 15
    assert np.bincount(ds.labels).tolist() == [5, 5, 5]
    assert ds.features.min() >= 0 and ds.features.max() <= 1
    again = data.generate_synthetic(3, 5, 4, 3.0, seed=1)
    assert np.array_equal(ds.features, again.features) and np.array_equal(ds.labels, again.labels)


def test_synthetic_nearest_centroid_separable():
    ds = data.generate_synthetic(2, 50, 8, 10.0, seed=3)
    centroids = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(2)])
    d = ((ds.features[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    assert np.array_equal(d.argmin(axis=1), ds.labels)


def test_train_test_split_disjoint():
    ds = data.generate_synthetic(2, 10, 2, 3.0, 0)
    train, test = data.train_test_split(ds, 5, 0)
    assert len(train) == 15 and len(test) == 5
    rows = {tuple(r) for r in train.features} | {tuple(r) for r in test.features}
    assert len(rows) == 20


def labelled(n, num_classes=10, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(np.zeros((n, 1)), rng.integers(0, num_classes, n), num_classes)


def test_iid_sizes_and_cover():
    ds = labelled(60_000)
    clients = data.partition_iid(ds, 100, seed=0)
    assert all(c.size == 600 for c in clients)
    allidx = np.concatenate([c.indices for c in clients])
    assert np.array_equal(np.sort(allidx), np.arange(60_000))


def test_iid_one_each_and_remainder():
    clients = data.partition_iid(labelled(10), 10, 0)
    assert sorted(int(c.indices[0]) for c in clients) == list(range(10))
    assert all(c.size == 1 for c in clients)
    assert all(c.size == 3 for c in data.partition_iid(labelled(11), 3, 0))
    with pytest.raises(ValueError):
        data.partition_iid(labelled(3), 4, 0)


def test_noniid_tiny_single_label():
    ds = Dataset(np.zeros((4, 1)), [0, 0, 1, 1], 2)
    plan = PartitionPlan("noniid_shards", 2, 2, 2, 1, seed=0)
    for c in data.partition(ds, plan):
        assert len(set(c.labels.tolist())) == 1


def test_noniid_matches_brute_force_rederivation():
    ds = labelled(6000, seed=4)
    plan = PartitionPlan("noniid_shards", 10, 20, 300, 2, seed=9)
    clients = data.partition_noniid(ds, plan)
    # independent re-derivation: walk samples label by label in original order
    sorted_idx = [i for lab in range(10) for i in range(len(ds)) if ds.labels[i] == lab]
    shard_members = [sorted_idx[s * 300:(s + 1) * 300] for s in range(20)]
    perm = np.random.default_rng(9).permutation(20)
    for c in clients:
        expect = set()
        for s in perm[2 * c.client_id:2 * c.client_id + 2]:
            expect |= set(shard_members[s])
        assert set(c.indices.tolist()) == expect
    hist = np.bincount([len(set(c.labels.tolist())) for c in clients], minlength=4)
    brute = np.bincount([len({int(ds.labels[i]) for i in ids})
                         for ids in ([*shard_members[perm[2 * k]], *shard_members[perm[2 * k + 1]]]
                                     for k in range(10))], minlength=4)
    assert np.array_equal(hist, brute)


def test_noniid_plan_violations():
    ds = labelled(100)
    with pytest.raises(ValueError):
        data.partition_noniid(ds, PartitionPlan("noniid_shards", 3, 4, 10, 2))
    with pytest.raises(ValueError):
        data.partition_noniid(ds, PartitionPlan("noniid_shards", 2, 4, 30, 2))


@given(st.integers(1, 400), st.integers(1, 20), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_iid_partition_exact(n, k, seed):
    if k > n:
        return
    clients = data.partition_iid(labelled(n), k, seed)
    idx = np.concatenate([c.indices for c in clients])
    assert len(np.unique(idx)) == len(idx) == k * (n // k)
    again = data.partition_iid(labelled(n), k, seed)
    assert all(np.array_equal(a.indices, b.indices) for a, b in zip(clients, again))


@given(st.integers(1, 10), st.integers(1, 3), st.integers(1, 20), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_noniid_partition_exact(clients, per, size, seed):
    ds = labelled(clients * per * size + 7, num_classes=5, seed=seed % 100)
    plan = PartitionPlan("noniid_shards", clients, clients * per, size, per, seed)
    parts = data.partition(ds, plan)
    idx = np.concatenate([c.indices for c in parts])
    assert len(np.unique(idx)) == len(idx) == clients * per * size


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_noniid_two_shards_at_most_two_labels(shards_per_label, size, seed):
    # every label count is a multiple of the shard size, so no shard straddles two labels
    labels = np.random.default_rng(seed).permutation(np.repeat(np.arange(5), shards_per_label * size))
    ds = Dataset(np.zeros((len(labels), 1)), labels, 5)
    shards = 5 * shards_per_label
    if shards % 2:
        return
    parts = data.partition(ds, PartitionPlan("noniid_shards", shards // 2, shards, size, 2, seed))
    assert all(len(set(c.labels.tolist())) <= 2 for c in parts)
