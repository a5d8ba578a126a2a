"""Dataset ingestion (IDX binary format), a synthetic generator, IID
partitioning, and validation splits. Everything is seed-deterministic."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature matrix [N, d] with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.labels) != self.features.shape[0]:
            raise InputError("features must be [N, d] with one label per row")
        if self.labels.size and self.labels.max() >= self.n_classes:
            raise InputError("label value exceeds class count")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.n_classes)


@dataclass
class Partition:
    """Disjoint per-client index lists into a parent dataset."""

    client_indices: list[np.ndarray]
    seed: int

    @property
    def clients(self) -> int:
        return len(self.client_indices)


def _read_be32(f, path) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path}: truncated header")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Read an MNIST-style IDX image/label file pair.

    Pixels are scaled to [0, 1] and flattened row-major to d = rows*cols.
    """
    with open(images_path, "rb") as f:
        magic = _read_be32(f, images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(
                f"{images_path}: bad image magic 0x{magic:08x}"
            )
        count = _read_be32(f, images_path)
        rows = _read_be32(f, images_path)
        cols = _read_be32(f, images_path)
        raw = f.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise FormatError(f"{images_path}: truncated pixel data")
        pixels = np.frombuffer(raw, dtype=np.uint8)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as f:
        magic = _read_be32(f, labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(
                f"{labels_path}: bad label magic 0x{magic:08x}"
            )
        n_labels = _read_be32(f, labels_path)
        raw = f.read(n_labels)
        if len(raw) != n_labels:
            raise FormatError(f"{labels_path}: truncated label data")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if n_labels != count:
        raise FormatError(
            f"image count {count} does not match label count {n_labels}"
        )
    n_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(features, labels, n_classes)


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write uint8 images [N, rows, cols] and labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or images.shape[0] != labels.shape[0]:
        raise InputError("images must be [N, rows, cols] with matching labels")
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(labels.tobytes())


def synth_dataset(
    n_classes: int,
    per_class: int,
    dim: int,
    separation: float,
    seed: int,
) -> Dataset:
    """Unit-variance Gaussian blobs whose class means are pairwise
    ``separation`` apart (means sit at separation/sqrt(2) along distinct
    axes, so dim must be >= n_classes)."""
    if separation <= 0:
        raise InputError("separation must be positive")
    if dim < n_classes:
        raise InputError("dim must be at least n_classes for equidistant means")
    rng = np.random.default_rng(seed)
    scale = separation / np.sqrt(2.0)
    features = np.empty((n_classes * per_class, dim))
    labels = np.empty(n_classes * per_class, dtype=np.int64)
    for k in range(n_classes):
        mean = np.zeros(dim)
        mean[k] = scale
        block = slice(k * per_class, (k + 1) * per_class)
        features[block] = mean + rng.normal(size=(per_class, dim))
        labels[block] = k
    order = rng.permutation(len(labels))
    return Dataset(features[order], labels[order], n_classes)


def partition_iid(dataset: Dataset, clients: int, per_client: int, seed: int) -> Partition:
    """Disjoint uniform draws without replacement, ``per_client`` each."""
    need = clients * per_client
    if need > len(dataset):
        raise InputError(
            f"need {need} samples for {clients} clients but dataset has {len(dataset)}"
        )
    rng = np.random.default_rng(seed)
    drawn = rng.permutation(len(dataset))[:need]
    return Partition(
        client_indices=[
            drawn[i * per_client : (i + 1) * per_client] for i in range(clients)
        ],
        seed=seed,
    )


def split_validation(dataset: Dataset, n_val: int, seed: int) -> tuple[Dataset, Dataset]:
    """Uniformly draw ``n_val`` rows out as the validation set."""
    if n_val >= len(dataset):
        raise InputError("validation size must be smaller than the dataset")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    return dataset.subset(perm[n_val:]), dataset.subset(perm[:n_val])
