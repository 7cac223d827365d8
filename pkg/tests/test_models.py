"""Classifier contracts: prediction purity, gradients, training, checkpoints."""

import numpy as np
import pytest

from querygame.data import DataSplit, Dataset
from querygame.models import (CheckpointError, TrainConfig, TrainingError,
                              evaluate_accuracy, load_model, save_model, train)


def tiny_split(split, n_train=512):
    train_part = split.train.subset(range(n_train))
    return DataSplit(train_part, split.eval, split.attack_seeds, split.benign_pool)


def test_predict_label_is_argmax_of_scores(natural_model, split):
    for i in range(20):
        pred = natural_model.predict(split.eval.images[i])
        assert pred.label == int(np.argmax(pred.scores))
        assert pred.scores.shape == (10,)


def test_predict_is_pure(natural_model, split):
    image = split.eval.images[0]
    a = natural_model.predict(image)
    b = natural_model.predict(image)
    assert a.label == b.label
    assert np.array_equal(a.scores, b.scores)


def test_predict_rejects_bad_shape(natural_model):
    with pytest.raises(ValueError, match="shape"):
        natural_model.predict(np.zeros((32, 32), dtype=np.float32))


def test_argmax_invariant_under_positive_rescaling(natural_model, split):
    for i in range(10):
        scores = natural_model.predict(split.eval.images[i]).scores
        assert np.argmax(scores) == np.argmax(scores * 7.5)


def test_untrained_model_is_chance_level(split):
    model = train(tiny_split(split), "natural", TrainConfig(epochs=0, seed=1))
    accuracy = evaluate_accuracy(model, split.eval)
    assert 0.02 <= accuracy <= 0.25


def test_loss_gradient_shape_and_determinism(natural_model, split):
    image = split.eval.images[3]
    g1 = natural_model.loss_gradient(image, 2)
    g2 = natural_model.loss_gradient(image, 2)
    assert g1.shape == image.shape
    assert np.array_equal(g1, g2)


def test_loss_gradient_rejects_bad_label(natural_model, split):
    with pytest.raises(ValueError, match="label"):
        natural_model.loss_gradient(split.eval.images[0], 10)


def test_loss_gradient_matches_central_differences(natural_model, split, rng):
    """Directional derivatives vs (L(x+hv) - L(x-hv)) / 2h at h=1e-4."""
    model = natural_model.copy_double()
    image = split.eval.images[5].astype(np.float64)
    label = int(split.eval.labels[5])
    h = 1e-4
    grad = model.loss_gradient(image, label)
    for _ in range(10):
        v = rng.standard_normal(image.shape)
        v /= np.max(np.abs(v))
        analytic = float(np.sum(grad * v))
        numeric = (model.loss_value(image + h * v, label)
                   - model.loss_value(image - h * v, label)) / (2 * h)
        assert abs(analytic - numeric) <= 1e-3 * max(abs(numeric), 1e-8)


def test_accuracy_equals_mean_correctness(natural_model, split):
    subset = split.eval.subset(range(200))
    accuracy = evaluate_accuracy(natural_model, subset)
    manual = np.mean([natural_model.predict(subset.images[i]).label == subset.labels[i]
                      for i in range(len(subset))])
    assert accuracy == pytest.approx(float(manual))
    assert 0.0 <= accuracy <= 1.0


def test_evaluate_accuracy_rejects_empty(natural_model, split):
    empty = split.eval.subset([])
    with pytest.raises(ValueError, match="empty"):
        evaluate_accuracy(natural_model, empty)


def test_zero_epsilon_attack_equals_clean_accuracy(natural_model, split):
    from querygame.attacks import AttackBudget, AttackSpec

    subset = split.eval.subset(range(64))
    budget = AttackBudget(epsilon=0.0, step_size=0.0, iters_per_round=2, max_rounds=3)
    attacked = evaluate_accuracy(natural_model, subset,
                                 attack=AttackSpec("pgd", budget), seed=0)
    assert attacked == pytest.approx(evaluate_accuracy(natural_model, subset))


def test_training_is_reproducible(split):
    config = TrainConfig(epochs=1, max_train_examples=512, seed=11)
    a = train(tiny_split(split), "natural", config)
    b = train(tiny_split(split), "natural", config)
    for pa, pb in zip(a.module.parameters(), b.module.parameters()):
        assert np.array_equal(pa.numpy(), pb.numpy())


def test_seed_stability_of_natural_accuracy(split):
    """Retraining with a second seed lands within 3 accuracy points."""
    subset = split.eval.subset(range(1000))
    accs = []
    for seed in (0, 1):
        model = train(split, "natural",
                      TrainConfig(epochs=1, max_train_examples=6000, seed=seed))
        accs.append(evaluate_accuracy(model, subset))
    assert abs(accs[0] - accs[1]) <= 0.03


def test_divergent_loss_raises_training_error(split):
    config = TrainConfig(epochs=2, max_train_examples=256, lr=1e12, seed=0)
    with pytest.raises(TrainingError, match="non-finite"):
        train(tiny_split(split, 256), "natural", config)


def test_adversarial_training_ignores_benign_pool_and_seeds(split):
    """Poisoning the held-out parts must not affect training."""
    base = tiny_split(split, 512)
    poisoned = DataSplit(
        train=base.train,
        eval=base.eval,
        attack_seeds=Dataset(np.ones_like(base.attack_seeds.images),
                             base.attack_seeds.labels, 10),
        benign_pool=Dataset(np.zeros_like(base.benign_pool.images),
                            base.benign_pool.labels, 10),
    )
    config = TrainConfig(epochs=1, max_train_examples=256, adv_iters=2, seed=3)
    a = train(base, "adversarial", config)
    b = train(poisoned, "adversarial", config)
    for pa, pb in zip(a.module.parameters(), b.module.parameters()):
        assert np.array_equal(pa.numpy(), pb.numpy())


def test_checkpoint_roundtrip(natural_model, split, tmp_path):
    path = tmp_path / "model.pt"
    save_model(natural_model, path)
    loaded = load_model(path)
    assert loaded.arch == natural_model.arch
    assert loaded.training_mode == natural_model.training_mode
    assert loaded.num_classes == natural_model.num_classes
    image = split.eval.images[0]
    assert np.array_equal(loaded.predict(image).scores,
                          natural_model.predict(image).scores)


def test_checkpoint_missing_fields_is_error(tmp_path):
    import torch

    path = tmp_path / "bad.pt"
    torch.save({"arch": "small_cnn"}, path)
    with pytest.raises(CheckpointError, match="missing"):
        load_model(path)


def test_resnet18_builds_and_predicts(split):
    config = TrainConfig(arch="resnet18", epochs=0, seed=0)
    model = train(tiny_split(split, 128), "natural", config)
    pred = model.predict(split.eval.images[0])
    assert pred.scores.shape == (10,)
