"""Synthetic stand-in dataset written in the CIFAR-10 binary format.

Produces a 10-class image set with the exact file layout of the CIFAR-10
binary distribution (5 train batches + 1 test batch of 10,000 records each)
so the whole pipeline can run on machines without the real data.

Each class combines a smooth low-frequency prototype (a robust, large-margin
feature) with a faint per-class high-frequency sign pattern whose amplitude
sits inside the attack budget (a predictive but non-robust feature), plus
per-sample brightness jitter, a smooth deformation field, and pixel noise.
Naturally trained models latch onto the faint pattern and are easy to attack;
adversarially trained models must use the prototypes and resist.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (CIFAR10_NUM_CLASSES, CIFAR10_RECORDS_PER_BATCH,
                   CIFAR10_TEST_FILE, CIFAR10_TRAIN_FILES)

IMAGE_HW = (32, 32)


@dataclass(frozen=True)
class SyntheticConfig:
    prototype_grid: int = 4
    prototype_low: float = 0.35
    prototype_high: float = 0.65
    signature_amplitude: float = 5.0 / 255.0
    brightness_sigma: float = 0.05
    field_grid: int = 8
    field_sigma: float = 0.08
    noise_sigma: float = 0.08


def _bilinear_upsample(field: np.ndarray, out_hw) -> np.ndarray:
    """Upsample (n, gh, gw, c) grids to (n, H, W, c) bilinearly."""
    gh, gw = field.shape[1:3]
    out_h, out_w = out_hw
    ys = np.linspace(0.0, gh - 1.0, out_h)
    xs = np.linspace(0.0, gw - 1.0, out_w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    wy = (ys - y0)[None, :, None, None]
    wx = (xs - x0)[None, None, :, None]
    f00 = field[:, y0][:, :, x0]
    f01 = field[:, y0][:, :, x1]
    f10 = field[:, y1][:, :, x0]
    f11 = field[:, y1][:, :, x1]
    return (f00 * (1 - wy) * (1 - wx) + f01 * (1 - wy) * wx
            + f10 * wy * (1 - wx) + f11 * wy * wx)


class SyntheticGenerator:
    """Seeded sample factory; prototypes and signatures are fixed per seed."""

    def __init__(self, seed: int, config: SyntheticConfig = SyntheticConfig()):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5F]))
        g = config.prototype_grid
        coarse = rng.uniform(config.prototype_low, config.prototype_high,
                             size=(CIFAR10_NUM_CLASSES, g, g, 3))
        self.prototypes = _bilinear_upsample(coarse, IMAGE_HW)
        self.signatures = rng.choice(
            [-1.0, 1.0], size=(CIFAR10_NUM_CLASSES, *IMAGE_HW, 3))
        self._rng = rng

    def sample(self, labels: np.ndarray) -> np.ndarray:
        """Generate one image per label; returns float32 (n, 32, 32, 3) in [0, 1]."""
        cfg = self.config
        n = len(labels)
        base = self.prototypes[labels]
        sig = self.signatures[labels] * cfg.signature_amplitude
        brightness = self._rng.normal(0.0, cfg.brightness_sigma, size=(n, 1, 1, 1))
        field = self._rng.normal(0.0, cfg.field_sigma,
                                 size=(n, cfg.field_grid, cfg.field_grid, 3))
        smooth = _bilinear_upsample(field, IMAGE_HW)
        noise = self._rng.normal(0.0, cfg.noise_sigma, size=(n, *IMAGE_HW, 3))
        images = base + sig + brightness + smooth + noise
        return np.clip(images, 0.0, 1.0).astype(np.float32)


def _write_batch(path: Path, images: np.ndarray, labels: np.ndarray) -> None:
    pixels = np.round(images * 255.0).astype(np.uint8)
    planes = pixels.transpose(0, 3, 1, 2).reshape(len(labels), -1)
    records = np.concatenate(
        [labels.astype(np.uint8)[:, None], planes], axis=1)
    records.tofile(path)


def write_synthetic_cifar10(root, seed: int = 0,
                            config: SyntheticConfig = SyntheticConfig()) -> Path:
    """Write a full synthetic dataset (50,000 train + 10,000 test records)
    in CIFAR-10 binary layout under `root`; returns the directory."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    gen = SyntheticGenerator(seed, config)
    order_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA7]))
    per_class = CIFAR10_RECORDS_PER_BATCH // CIFAR10_NUM_CLASSES
    for fname in (*CIFAR10_TRAIN_FILES, CIFAR10_TEST_FILE):
        labels = np.repeat(np.arange(CIFAR10_NUM_CLASSES), per_class)
        labels = labels[order_rng.permutation(CIFAR10_RECORDS_PER_BATCH)]
        _write_batch(root / fname, gen.sample(labels), labels)
    (root / "batches.meta.txt").write_text(
        "".join(f"class_{i}\n" for i in range(CIFAR10_NUM_CLASSES)))
    return root
