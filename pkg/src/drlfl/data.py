"""Datasets, IDX ingestion, the synthetic blob generator, and client partitioning."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{path}: {message}")


class BadMagicError(IdxError):
    pass


class TruncatedIdxError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray  # (num_samples, feature_dim), values in [0, 1]
    labels: np.ndarray  # (num_samples,) ints in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if len(x) != len(y):
            raise ValueError(f"{len(x)} feature rows but {len(y)} labels")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One device's share: indices into a pooled :class:`Dataset`."""

    client_id: int
    indices: np.ndarray
    source: Dataset

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).reshape(-1)
        if len(np.unique(idx)) != len(idx):
            raise ValueError(f"client {self.client_id} has duplicate indices")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return len(self.indices)

    def __len__(self):
        return self.size

    @property
    def features(self) -> np.ndarray:
        return self.source.features[self.indices]

    @property
    def labels(self) -> np.ndarray:
        return self.source.labels[self.indices]


# -- IDX ---------------------------------------------------------------------

def _read_header(path, buf, magic, ndims):
    if len(buf) < 4 + 4 * ndims:
        raise TruncatedIdxError(path, "truncated header")
    (got,) = struct.unpack_from(">I", buf, 0)
    if got != magic:
        raise BadMagicError(path, f"bad magic 0x{got:08x}, expected 0x{magic:08x}")
    return struct.unpack_from(f">{ndims}I", buf, 4)


def read_idx_images(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    count, rows, cols = _read_header(path, buf, IMAGES_MAGIC, 3)
    need = count * rows * cols
    payload = np.frombuffer(buf, dtype=np.uint8, offset=16)
    if payload.size < need:
        raise TruncatedIdxError(path, f"truncated payload: {payload.size} of {need} bytes")
    return payload[:need].reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (count,) = _read_header(path, buf, LABELS_MAGIC, 1)
    payload = np.frombuffer(buf, dtype=np.uint8, offset=8)
    if payload.size < count:
        raise TruncatedIdxError(path, f"truncated payload: {payload.size} of {count} labels")
    return payload[:count]


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1] by /255."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(
            labels_path, f"{len(labels)} labels but {images_path} holds {len(images)} images")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), num_classes)


def write_idx(dataset: Dataset, images_path, labels_path, rows: int | None = None, cols: int = 1) -> None:
    """Write features (quantized to bytes) and labels as an IDX pair."""
    n, dim = dataset.features.shape
    if rows is None:
        rows, cols = dim, 1
    if rows * cols != dim:
        raise ValueError(f"{rows}x{cols} does not match feature_dim {dim}")
    pixels = np.rint(dataset.features * 255.0).clip(0, 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes())


# -- on-disk cache for generated data ----------------------------------------
# b"DSET", then uint32 rows, cols, num_classes (little-endian), float64 features
# row-major, uint32 labels.

def save_dataset(path, dataset: Dataset) -> None:
    n, d = dataset.features.shape
    header = b"DSET" + struct.pack("<III", n, d, dataset.num_classes)
    Path(path).write_bytes(
        header + dataset.features.astype("<f8").tobytes() + dataset.labels.astype("<u4").tobytes())


def load_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()
    if buf[:4] != b"DSET":
        raise ValueError(f"{path}: not a dataset cache file")
    n, d, k = struct.unpack_from("<III", buf, 4)
    if len(buf) != 16 + 8 * n * d + 4 * n:
        raise ValueError(f"{path}: truncated dataset cache")
    x = np.frombuffer(buf, dtype="<f8", count=n * d, offset=16).reshape(n, d)
    y = np.frombuffer(buf, dtype="<u4", count=n, offset=16 + 8 * n * d)
    return Dataset(x, y, k)


# -- synthetic ---------------------------------------------------------------

def generate_synthetic(num_classes: int, samples_per_class: int, feature_dim: int,
                       class_separation: float, seed: int) -> Dataset:
    """Gaussian blobs, unit within-class variance, shuffled, rescaled to [0, 1].

    Class means get random directions and are then scaled so the closest pair
    sits exactly ``class_separation`` apart. The final [0, 1] rescale is one
    global affine map, so the geometry (and nearest-centroid decisions) is kept.
    """
    if min(num_classes, samples_per_class, feature_dim) < 1:
        raise ValueError("counts must be >= 1")
    if class_separation <= 0:
        raise ValueError("class_separation must be positive")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, feature_dim))
    if num_classes > 1:
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        closest = dist[np.triu_indices(num_classes, 1)].min()
        means *= class_separation / closest
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    x = means[labels] + rng.standard_normal((len(labels), feature_dim))
    order = rng.permutation(len(labels))
    x, labels = x[order], labels[order]
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return Dataset(x, labels, num_classes)


def train_test_split(dataset: Dataset, test_size: int, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < test_size < len(dataset):
        raise ValueError(f"test_size must be in (0, {len(dataset)})")
    order = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(np.sort(order[test_size:])), dataset.subset(np.sort(order[:test_size]))


# -- partitioning --------------------------------------------------------------

@dataclass(frozen=True)
class PartitionPlan:
    scheme: str = "iid"  # iid | noniid_shards
    num_clients: int = 100
    shard_count: int = 200
    shard_size: int = 300
    shards_per_client: int = 2
    seed: int = 0

    def violations(self, num_samples: int | None = None) -> list[str]:
        out = []
        if self.scheme not in ("iid", "noniid_shards"):
            out.append(f"unknown partition scheme {self.scheme!r}")
        if self.num_clients < 1:
            out.append("num_clients must be >= 1")
        if self.scheme == "noniid_shards":
            if min(self.shard_count, self.shard_size, self.shards_per_client) < 1:
                out.append("shard_count, shard_size and shards_per_client must be >= 1")
            if self.shards_per_client * self.num_clients != self.shard_count:
                out.append("shards_per_client * num_clients must equal shard_count")
            if num_samples is not None and self.shard_count * self.shard_size > num_samples:
                out.append(f"shard_count * shard_size exceeds the {num_samples} available samples")
        elif num_samples is not None and self.num_clients > num_samples:
            out.append(f"num_clients exceeds the {num_samples} available samples")
        return out


def partition_iid(dataset: Dataset, num_clients: int, seed: int) -> list[ClientDataset]:
    """Shuffle, then deal equal contiguous slices; the remainder is dropped."""
    n = len(dataset)
    if num_clients < 1 or num_clients > n:
        raise ValueError(f"cannot split {n} samples across {num_clients} clients")
    per = n // num_clients
    order = np.random.default_rng(seed).permutation(n)
    return [ClientDataset(c, order[c * per:(c + 1) * per], dataset) for c in range(num_clients)]


def partition_noniid(dataset: Dataset, plan: PartitionPlan) -> list[ClientDataset]:
    """Label-sorted shards, shuffled and dealt ``shards_per_client`` at a time."""
    problems = plan.violations(len(dataset))
    if plan.scheme != "noniid_shards":
        problems.append("plan scheme is not noniid_shards")
    if problems:
        raise ValueError("; ".join(problems))
    by_label = np.argsort(dataset.labels, kind="stable")
    shards = by_label[:plan.shard_count * plan.shard_size].reshape(plan.shard_count, plan.shard_size)
    shard_order = np.random.default_rng(plan.seed).permutation(plan.shard_count)
    k = plan.shards_per_client
    return [
        ClientDataset(c, shards[shard_order[c * k:(c + 1) * k]].reshape(-1), dataset)
        for c in range(plan.num_clients)
    ]


def partition(dataset: Dataset, plan: PartitionPlan) -> list[ClientDataset]:
    if plan.scheme == "iid":
        return partition_iid(dataset, plan.num_clients, plan.seed)
    return partition_noniid(dataset, plan)
