"""Victim classifiers: training, persistence, prediction, and gradients.

Images cross this boundary as float32 (h, w, c) arrays in [0, 1]; tensors are
an internal detail. A trained Model is frozen (eval mode, no parameter grads)
and safe to share across concurrent sessions.

The desk-scale architecture is a small convolutional network built from
smooth pieces (GELU activations, average pooling) so that input gradients
match finite differences tightly; ResNet-18 (CIFAR stem) is available for
full-scale runs.
"""

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import attacks
from .attacks import AttackSpec, make_session
from .data import Dataset, DataSplit

TRAINING_MODES = ("natural", "adversarial")
CHECKPOINT_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    """Training diverged or was misconfigured."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing fields or malformed."""


@dataclass(frozen=True)
class Prediction:
    label: int
    scores: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "small_cnn"
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 0.0
    max_train_examples: Optional[int] = None
    # adversarial mode: inner PGD recipe applied to every mini-batch
    adv_iters: int = 7
    adv_epsilon: float = attacks.DEFAULT_EPSILON
    adv_step_size: float = attacks.DEFAULT_STEP_SIZE
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _small_cnn(num_classes: int) -> nn.Module:
    return nn.Sequential(
        nn.Conv2d(3, 16, 3, padding=1), nn.GELU(),
        nn.Conv2d(16, 16, 3, padding=1), nn.GELU(),
        nn.AvgPool2d(2),
        nn.Conv2d(16, 32, 3, padding=1), nn.GELU(),
        nn.Conv2d(32, 32, 3, padding=1), nn.GELU(),
        nn.AvgPool2d(2),
        nn.Flatten(),
        nn.Linear(32 * 8 * 8, 128), nn.GELU(),
        nn.Linear(128, num_classes),
    )


def _resnet18_cifar(num_classes: int) -> nn.Module:
    from torchvision.models import resnet18

    module = resnet18(weights=None, num_classes=num_classes)
    # 32x32 stem: 3x3 stride-1 conv, no max pool
    module.conv1 = nn.Conv2d(3, 64, kernel_size=3, stride=1, padding=1, bias=False)
    module.maxpool = nn.Identity()
    return module


ARCHITECTURES = {
    "small_cnn": _small_cnn,
    "resnet18": _resnet18_cifar,
}


class Model:
    """A frozen classifier exposing predictions and input-loss gradients."""

    def __init__(self, module: nn.Module, arch: str, num_classes: int,
                 training_mode: str, train_config: Optional[dict] = None):
        if training_mode not in TRAINING_MODES:
            raise ValueError(f"training_mode must be one of {TRAINING_MODES}")
        self.module = module
        self.arch = arch
        self.num_classes = int(num_classes)
        self.training_mode = training_mode
        self.train_config = dict(train_config or {})
        self.module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.module.parameters()).dtype

    def _to_tensor(self, images: np.ndarray) -> torch.Tensor:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        if images.ndim != 4 or images.shape[-1] != 3:
            raise ValueError(f"expected (h, w, c=3) image(s), got shape {images.shape}")
        chw = np.ascontiguousarray(images.transpose(0, 3, 1, 2))
        if not chw.flags.writeable:
            chw = chw.copy()
        return torch.from_numpy(chw).to(self.dtype)

    def predict(self, image: np.ndarray) -> Prediction:
        """Label and full score vector for one image. Pure and deterministic."""
        with torch.no_grad():
            scores = self.module(self._to_tensor(image))[0].numpy()
        return Prediction(label=int(np.argmax(scores)), scores=scores)

    def predict_batch(self, images: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Predicted labels for (n, h, w, c) images."""
        labels = []
        with torch.no_grad():
            for lo in range(0, len(images), batch_size):
                scores = self.module(self._to_tensor(images[lo:lo + batch_size]))
                labels.append(scores.argmax(dim=1).numpy())
        return np.concatenate(labels) if labels else np.empty(0, dtype=np.int64)

    def loss_gradient(self, image: np.ndarray, label: int) -> np.ndarray:
        """Gradient of the cross-entropy loss at the input, same shape as it."""
        if not 0 <= int(label) < self.num_classes:
            raise ValueError(f"label {label} out of range [0, {self.num_classes})")
        x = self._to_tensor(image).requires_grad_(True)
        loss = F.cross_entropy(self.module(x), torch.tensor([int(label)]))
        grad = torch.autograd.grad(loss, x)[0][0]
        out_dtype = np.float64 if self.dtype == torch.float64 else np.float32
        return grad.permute(1, 2, 0).numpy().astype(out_dtype)

    def loss_value(self, image: np.ndarray, label: int) -> float:
        with torch.no_grad():
            loss = F.cross_entropy(self.module(self._to_tensor(image)),
                                   torch.tensor([int(label)]))
        return float(loss)

    def copy_double(self) -> "Model":
        """Float64 copy (for finite-difference gradient checks)."""
        import copy

        module = copy.deepcopy(self.module).double()
        return Model(module, self.arch, self.num_classes, self.training_mode,
                     self.train_config)


def build_module(arch: str, num_classes: int) -> nn.Module:
    try:
        factory = ARCHITECTURES[arch]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {tuple(ARCHITECTURES)}")
    return factory(num_classes)


def train(split: DataSplit, mode: str, config: TrainConfig = TrainConfig()) -> Model:
    """Train a classifier on split.train only.

    Natural mode minimizes cross-entropy on clean batches; adversarial mode
    perturbs every mini-batch with batched PGD (adv_iters steps at
    adv_epsilon / adv_step_size) before the update. Fixed seed gives
    reproducible parameters.
    """
    if mode not in TRAINING_MODES:
        raise ValueError(f"mode must be one of {TRAINING_MODES}")
    if len(split.train) == 0:
        raise ValueError("training part of the split is empty")

    torch.manual_seed(config.seed)
    module = build_module(config.arch, split.train.num_classes)
    generator = torch.Generator().manual_seed(config.seed)

    images, labels = split.train.images, split.train.labels
    if config.max_train_examples is not None and config.max_train_examples < len(images):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7D]))
        keep = rng.permutation(len(images))[:config.max_train_examples]
        images, labels = images[keep], labels[keep]
    x_all = torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))
    y_all = torch.from_numpy(labels.copy())

    optimizer = torch.optim.Adam(module.parameters(), lr=config.lr,
                                 weight_decay=config.weight_decay)
    for _ in range(config.epochs):
        order = torch.randperm(len(x_all), generator=generator)
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            if mode == "adversarial":
                module.eval()
                xb = attacks.pgd_perturb_batch(
                    module, xb, yb, epsilon=config.adv_epsilon,
                    step_size=config.adv_step_size, iters=config.adv_iters,
                    generator=generator)
            module.train()
            optimizer.zero_grad()
            loss = F.cross_entropy(module(xb), yb)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite training loss: {loss.item()}")
            loss.backward()
            optimizer.step()

    return Model(module, config.arch, split.train.num_classes, mode,
                 config.to_dict())


def evaluate_accuracy(model: Model, dataset: Dataset,
                      attack: Optional[AttackSpec] = None, seed: int = 0,
                      max_examples: Optional[int] = None) -> float:
    """Fraction of examples the model still classifies correctly.

    With no attack this is plain accuracy. With an attack, each example gets
    its own session run to the budget's max_rounds (stopping early on
    success); the example counts as correct only if no candidate fooled the
    model.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    images, labels = dataset.images, dataset.labels
    if max_examples is not None and max_examples < len(images):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xEA]))
        keep = rng.permutation(len(images))[:max_examples]
        images, labels = images[keep], labels[keep]

    if attack is None:
        predicted = model.predict_batch(images)
        return float(np.mean(predicted == labels))

    survived = 0
    for i, (image, label) in enumerate(zip(images, labels)):
        session = make_session(attack, image, int(label),
                               seed=np.random.SeedSequence([seed, i]))
        fooled = False
        while not session.exhausted:
            if session.next_round(model).success:
                fooled = True
                break
        survived += not fooled
    return survived / len(images)


def save_model(model: Model, path) -> None:
    torch.save({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch": model.arch,
        "num_classes": model.num_classes,
        "training_mode": model.training_mode,
        "train_config": model.train_config,
        "state_dict": model.module.state_dict(),
    }, path)


def load_model(path) -> Model:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    required = {"format_version", "arch", "num_classes", "training_mode", "state_dict"}
    missing = required - set(payload)
    if missing:
        raise CheckpointError(f"checkpoint {path} is missing fields: {sorted(missing)}")
    module = build_module(payload["arch"], payload["num_classes"])
    module.load_state_dict(payload["state_dict"])
    return Model(module, payload["arch"], payload["num_classes"],
                 payload["training_mode"], payload.get("train_config"))
