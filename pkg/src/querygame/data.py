"""Dataset loading and partitioning.

Images are float32 arrays of shape (height, width, channels) with every
intensity in [0, 1]. The loader reads the standard CIFAR-10 binary
distribution (3073-byte records: 1 label byte followed by 3072 pixel bytes
stored as row-major R, G, B planes).
"""

import os
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

CIFAR10_IMAGE_SHAPE = (32, 32, 3)
CIFAR10_NUM_CLASSES = 10
CIFAR10_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR10_RECORDS_PER_BATCH = 10_000
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILE = "test_batch.bin"

DATASET_ROOT_ENV = "QUERYGAME_DATASET_ROOT"


class IngestionError(RuntimeError):
    """A dataset file is missing or unreadable."""


class DataIntegrityError(IngestionError):
    """A dataset file exists but does not match the expected format."""


@dataclass(frozen=True)
class LabeledExample:
    image: np.ndarray
    label: int


class Dataset:
    """An ordered, immutable collection of labeled images.

    `images` has shape (n, height, width, channels) and dtype float32 with
    values in [0, 1]; `labels` has shape (n,) with class indices below
    `num_classes`. Split parts may be empty; loaded datasets never are.
    """

    def __init__(self, images: np.ndarray, labels: np.ndarray,
                 num_classes: int, name: str = "dataset"):
        images = np.asarray(images, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be 4-d (n, h, w, c), got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ValueError(f"labels shape {labels.shape} does not match {images.shape[0]} images")
        if num_classes <= 0:
            raise ValueError("num_classes must be positive")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("image intensities must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        self._images = images
        self._labels = labels
        self._images.setflags(write=False)
        self._labels.setflags(write=False)
        self.num_classes = int(num_classes)
        self.name = name

    @property
    def images(self) -> np.ndarray:
        return self._images

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def image_shape(self):
        return self._images.shape[1:]

    def __len__(self) -> int:
        return self._images.shape[0]

    def __getitem__(self, index: int) -> LabeledExample:
        return LabeledExample(self._images[index], int(self._labels[index]))

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self._images[indices], self._labels[indices],
                       self.num_classes, name or self.name)

    def __repr__(self):
        return f"Dataset({self.name!r}, n={len(self)}, classes={self.num_classes})"


@dataclass(frozen=True)
class DataSplit:
    """Disjoint partition of the source material.

    `benign_pool` is reserved for evasion experiments and must never be shown
    to a detector beforehand; `attack_seeds` supplies trial starting images.
    """

    train: Dataset
    eval: Dataset
    attack_seeds: Dataset
    benign_pool: Dataset

    @property
    def parts(self):
        return (self.train, self.eval, self.attack_seeds, self.benign_pool)


class Cifar10Data(NamedTuple):
    train: Dataset
    test: Dataset


def resolve_dataset_root(path: Optional[str]) -> Path:
    """Resolve the dataset directory from an explicit path or the environment."""
    root = path or os.environ.get(DATASET_ROOT_ENV)
    if not root:
        raise IngestionError(
            f"no dataset root given; pass --dataset-root or set {DATASET_ROOT_ENV}")
    root = Path(root)
    if (root / CIFAR10_TEST_FILE).exists():
        return root
    nested = root / "cifar-10-batches-bin"
    if (nested / CIFAR10_TEST_FILE).exists():
        return nested
    raise IngestionError(f"missing dataset file: {root / CIFAR10_TEST_FILE}")


def _read_batch(path: Path) -> tuple[np.ndarray, np.ndarray]:
    if not path.exists():
        raise IngestionError(f"missing dataset file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size != CIFAR10_RECORD_BYTES * CIFAR10_RECORDS_PER_BATCH:
        raise DataIntegrityError(
            f"{path}: expected {CIFAR10_RECORDS_PER_BATCH} records "
            f"({CIFAR10_RECORD_BYTES * CIFAR10_RECORDS_PER_BATCH} bytes), got {raw.size} bytes")
    records = raw.reshape(CIFAR10_RECORDS_PER_BATCH, CIFAR10_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= CIFAR10_NUM_CLASSES:
        raise DataIntegrityError(f"{path}: label byte {labels.max()} out of range")
    # channel planes -> (n, h, w, c), bytes -> [0, 1]
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    images = pixels.astype(np.float32, order="C") / 255.0
    return images, labels


def load_cifar10(path) -> Cifar10Data:
    """Load the CIFAR-10 binary distribution rooted at `path`.

    Returns train (50,000 examples) and test (10,000 examples) datasets with
    intensities divided by 255 into [0, 1].
    """
    root = resolve_dataset_root(str(path))
    train_images, train_labels = [], []
    for fname in CIFAR10_TRAIN_FILES:
        images, labels = _read_batch(root / fname)
        train_images.append(images)
        train_labels.append(labels)
    test_images, test_labels = _read_batch(root / CIFAR10_TEST_FILE)
    train = Dataset(np.concatenate(train_images), np.concatenate(train_labels),
                    CIFAR10_NUM_CLASSES, name="cifar10-train")
    test = Dataset(test_images, test_labels, CIFAR10_NUM_CLASSES, name="cifar10-test")
    return Cifar10Data(train=train, test=test)


def make_split(dataset: Dataset, sizes: Sequence[int], seed: int) -> DataSplit:
    """Partition `dataset` into train/eval/attack_seeds/benign_pool parts.

    `sizes` gives the four part sizes in that order and must sum to at most
    len(dataset). The partition is a seeded permutation, so a fixed seed
    yields bit-identical splits and the parts are disjoint by construction.
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 4:
        raise ValueError(f"sizes must have 4 entries (train, eval, attack_seeds, benign_pool), got {len(sizes)}")
    if any(s < 0 for s in sizes):
        raise ValueError(f"sizes must be non-negative, got {sizes}")
    if sum(sizes) > len(dataset):
        raise ValueError(f"sizes sum to {sum(sizes)} but dataset has {len(dataset)} examples")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    names = ("train", "eval", "attack_seeds", "benign_pool")
    parts = []
    offset = 0
    for count, part_name in zip(sizes, names):
        idx = order[offset:offset + count]
        parts.append(dataset.subset(idx, name=f"{dataset.name}/{part_name}"))
        offset += count
    return DataSplit(*parts)


def standard_split(cifar: Cifar10Data, seed: int,
                   eval_size: int = 9000, attack_seed_size: int = 500,
                   benign_pool_size: int = 500) -> DataSplit:
    """Default experiment split: the full train set for training, and the
    test set carved into eval / attack seeds / detector-unseen benign pool."""
    test_parts = make_split(cifar.test, (0, eval_size, attack_seed_size, benign_pool_size), seed)
    return DataSplit(train=cifar.train, eval=test_parts.eval,
                     attack_seeds=test_parts.attack_seeds,
                     benign_pool=test_parts.benign_pool)
