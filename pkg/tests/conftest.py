"""Shared fixtures: the synthetic dataset and desk-scale trained models.

Both are expensive, so they are built once and cached under .cache/ at the
repo root; delete that directory to force regeneration. Real CIFAR-10 can be
substituted by setting QUERYGAME_DATASET_ROOT before running the suite.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from querygame.data import load_cifar10, standard_split
from querygame.models import TrainConfig, load_model, save_model, train
from querygame.synthetic import write_synthetic_cifar10

CACHE_DIR = Path(__file__).resolve().parent.parent / ".cache"
SPLIT_SEED = 42

NATURAL_CONFIG = TrainConfig(epochs=3, max_train_examples=16_000, seed=0)
ADVERSARIAL_CONFIG = TrainConfig(epochs=3, max_train_examples=8_000, seed=0)


@pytest.fixture(scope="session")
def data_root() -> Path:
    env_root = os.environ.get("QUERYGAME_DATASET_ROOT")
    if env_root:
        return Path(env_root)
    root = CACHE_DIR / "synthetic-cifar10"
    if not (root / "test_batch.bin").exists():
        write_synthetic_cifar10(root, seed=0)
    return root


@pytest.fixture(scope="session")
def cifar(data_root):
    return load_cifar10(data_root)


@pytest.fixture(scope="session")
def split(cifar):
    return standard_split(cifar, seed=SPLIT_SEED)


def _record_train_time(mode: str, seconds: float) -> None:
    path = CACHE_DIR / "train_timings.json"
    timings = json.loads(path.read_text()) if path.exists() else {}
    timings[mode] = seconds
    path.write_text(json.dumps(timings))


def _cached_model(split, mode, config, path: Path):
    if path.exists():
        return load_model(path)
    started = time.time()
    model = train(split, mode, config)
    path.parent.mkdir(parents=True, exist_ok=True)
    _record_train_time(mode, time.time() - started)
    save_model(model, path)
    return model


@pytest.fixture(scope="session")
def natural_model(split):
    return _cached_model(split, "natural", NATURAL_CONFIG,
                         CACHE_DIR / "model_natural.pt")


@pytest.fixture(scope="session")
def adversarial_model(split):
    return _cached_model(split, "adversarial", ADVERSARIAL_CONFIG,
                         CACHE_DIR / "model_adversarial.pt")


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
