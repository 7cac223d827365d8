"""Game mechanics: win conditions, accounting, reproducibility, collisions."""

import numpy as np
import pytest

from querygame import arena
from querygame.arena import (EvasionPolicy, TrialOutcome, collision_study,
                             detector_seed, half_width_95, run_series,
                             run_trial, winner_stats)
from querygame.attacks import AttackBudget, AttackSpec, default_budget, make_session
from querygame.config import ConfigError, SimulationConfig
from querygame.data import Dataset
from querygame.detectors import BlacklightDetector, make_detector
from querygame.querylog import replay_verdicts


def pgd_spec(max_rounds=10):
    return AttackSpec("pgd", default_budget("pgd", max_rounds=max_rounds))


def session_factory_for(spec, example):
    return lambda seed: make_session(spec, example.image, example.label, seed=seed)


def correctly_classified_example(model, dataset):
    for i in range(len(dataset)):
        if model.predict(dataset.images[i]).label == dataset.labels[i]:
            return dataset[i]
    raise AssertionError("no correctly classified example found")


class TestTrialOutcome:
    def test_defender_requires_detection_round(self):
        with pytest.raises(ValueError, match="detection_round"):
            TrialOutcome("defender", 2, 2, 6)

    def test_false_positive_implies_attacker(self):
        with pytest.raises(ValueError, match="attacker"):
            TrialOutcome("defender", 2, 2, 6, detection_round=2, false_positive=True)

    def test_unknown_winner_rejected(self):
        with pytest.raises(ValueError, match="winner"):
            TrialOutcome("draw", 1, 1, 3)


class TestStats:
    def test_half_width_is_zero_for_single_sample(self):
        assert half_width_95([4.0]) == 0.0
        assert half_width_95([]) == 0.0

    def test_half_width_formula(self):
        values = [1.0, 2.0, 3.0, 4.0]
        expected = 1.96 * np.std(values, ddof=1) / 2.0
        assert half_width_95(values) == pytest.approx(expected)

    def test_winner_stats_on_empty_subsample(self):
        stats = winner_stats([TrialOutcome("attacker", 1, 1, 3)], "defender")
        assert stats.count == 0
        assert stats.mean_rounds == 0.0


def test_rejects_misclassified_seed_image(natural_model, split):
    for i in range(len(split.attack_seeds)):
        example = split.attack_seeds[i]
        if natural_model.predict(example.image).label != example.label:
            factory = session_factory_for(pgd_spec(), example)
            with pytest.raises(ValueError, match="correctly classified"):
                run_trial(natural_model, factory, seed=0)
            return
    pytest.skip("model classifies every attack seed correctly")


def test_accounting_conservation_no_detector(natural_model, split):
    example = correctly_classified_example(natural_model, split.attack_seeds)
    outcome = run_trial(natural_model, session_factory_for(pgd_spec(), example), seed=1)
    assert outcome.winner in ("attacker", "timeout")
    assert outcome.rounds == outcome.adversarial_rounds
    assert outcome.adversarial_queries == 3 * outcome.adversarial_rounds


def test_rounds_count_benign_and_adversarial(adversarial_model, split):
    example = correctly_classified_example(adversarial_model, split.attack_seeds)
    policy = EvasionPolicy(benign_rounds_between=4, benign_pool=split.benign_pool)
    detector = BlacklightDetector(seed=3)
    outcome = run_trial(adversarial_model, session_factory_for(pgd_spec(3), example),
                        detector=detector, evasion=policy, seed=2)
    assert outcome.rounds == outcome.adversarial_rounds * 5 or outcome.false_positive
    if outcome.winner == "defender":
        assert outcome.detection_round == outcome.rounds


def test_timeout_when_session_exhausts(adversarial_model, split):
    # a 1-round budget on a robust model nearly always times out; find a seed
    spec = pgd_spec(max_rounds=1)
    for i in range(len(split.attack_seeds)):
        example = split.attack_seeds[i]
        if adversarial_model.predict(example.image).label != example.label:
            continue
        outcome = run_trial(adversarial_model, session_factory_for(spec, example), seed=4)
        if outcome.winner == "timeout":
            assert outcome.adversarial_rounds == 1
            return
    pytest.skip("every seed image fell to a single PGD round")


def test_benign_pool_exhaustion_is_config_error(natural_model, split):
    example = correctly_classified_example(natural_model, split.attack_seeds)
    tiny_pool = split.benign_pool.subset(range(3))
    policy = EvasionPolicy(benign_rounds_between=2, benign_pool=tiny_pool)
    # a zero-budget attack never succeeds, so the game keeps cycling until
    # the 3-image pool runs dry in the second cycle
    spec = AttackSpec("pgd", AttackBudget(epsilon=0.0, step_size=0.0,
                                          iters_per_round=2, max_rounds=50))
    with pytest.raises(ConfigError, match="pool of at least 4"):
        run_trial(natural_model, session_factory_for(spec, example),
                  evasion=policy, seed=5)


def test_exactly_one_winner_and_seeded_replay(natural_model, split):
    stats_a = run_series(natural_model, pgd_spec(), split.attack_seeds,
                         trials=12, master_seed=77)
    stats_b = run_series(natural_model, pgd_spec(), split.attack_seeds,
                         trials=12, master_seed=77)
    assert stats_a == stats_b  # bit-identical aggregate incl. per-trial outcomes
    assert stats_a.attacker.count + stats_a.defender.count + stats_a.timeout.count == 12


def test_trials_are_independent_of_execution_order(natural_model, split):
    """Re-running single trials in reverse order reproduces the series."""
    spec = pgd_spec()
    detector_factory = lambda i: make_detector("linf", seed=detector_seed(31, i))
    series = run_series(natural_model, spec, split.attack_seeds, trials=6,
                        master_seed=31, detector_factory=detector_factory)
    eligible = arena.eligible_seed_indices(natural_model, split.attack_seeds)
    rng = np.random.default_rng(np.random.SeedSequence([31, arena.SEED_SELECTION]))
    chosen = rng.choice(eligible, size=6, replace=False)
    for i in reversed(range(6)):
        example = split.attack_seeds[int(chosen[i])]
        outcome = run_trial(natural_model, session_factory_for(spec, example),
                            detector=detector_factory(i), seed=(31, i), trial_id=i)
        assert outcome == series.outcomes[i]


def test_pgd_trials_on_natural_model_mostly_succeed(natural_model, split):
    """Desk-scale protocol re-run: no detector, mean rounds finite and >= 1.

    At full scale every trial succeeds; the desk-scale model leaves a few
    stubborn seeds unconverted within the budget, so require >= 90%.
    """
    stats = run_series(natural_model, pgd_spec(max_rounds=150),
                       split.attack_seeds, trials=100, master_seed=55)
    assert stats.attacker.count >= 90
    assert np.isfinite(stats.attacker.mean_rounds)
    assert stats.attacker.mean_rounds >= 1.0
    assert stats.attacker.mean_queries == pytest.approx(
        3 * stats.attacker.mean_rounds)


def test_too_few_eligible_seeds_is_config_error(natural_model, split):
    tiny = split.attack_seeds.subset(range(4))
    with pytest.raises(ConfigError, match="correctly classified"):
        run_series(natural_model, pgd_spec(), tiny, trials=100, master_seed=0)


def test_evasion_window_zero_matches_plain_game(natural_model, split):
    detector_factory = lambda i: make_detector("linf", seed=detector_seed(13, i))
    plain = run_series(natural_model, pgd_spec(), split.attack_seeds, trials=10,
                       master_seed=13, detector_factory=detector_factory)
    noop = run_series(natural_model, pgd_spec(), split.attack_seeds, trials=10,
                      master_seed=13, detector_factory=detector_factory,
                      evasion=EvasionPolicy(0, split.benign_pool))
    assert plain.outcomes == noop.outcomes


def test_query_log_replay_matches_detector_verdicts(natural_model, split):
    example = correctly_classified_example(natural_model, split.attack_seeds)
    detector = make_detector("linf", seed=1)
    log = []
    outcome = run_trial(natural_model, session_factory_for(pgd_spec(), example),
                        detector=detector, seed=9, query_log=log)
    assert log, "trial should have logged queries"
    detector.reset()
    verdicts = replay_verdicts(detector, log)
    flagged = [v.flagged for v in verdicts]
    if outcome.winner == "defender":
        assert flagged[-1]
        assert not any(flagged[:-1])


class TestCollisionStudy:
    def test_duplicate_dataset_collides(self, rng):
        images = rng.random((6, 32, 32, 3)).astype(np.float32)
        images[4] = images[1]
        dataset = Dataset(images, np.zeros(6, dtype=np.int64), 10, "dup")
        detector = BlacklightDetector(window=None, seed=5)
        assert collision_study(detector, dataset) >= 1

    def test_study_resets_detector_first(self, rng):
        images = rng.random((4, 32, 32, 3)).astype(np.float32)
        dataset = Dataset(images, np.zeros(4, dtype=np.int64), 10, "clean")
        detector = BlacklightDetector(window=None, seed=5)
        detector.check(images[0])  # pre-pollute; study must reset
        assert collision_study(detector, dataset) == 0

    def test_order_invariance_for_exact_duplicates(self, rng):
        images = rng.random((10, 32, 32, 3)).astype(np.float32)
        images[7] = images[2]
        images[9] = images[2]
        labels = np.zeros(10, dtype=np.int64)
        detector = BlacklightDetector(window=None, seed=6)
        baseline = collision_study(detector, Dataset(images, labels, 10, "a"))
        for perm_seed in range(3):
            order = np.random.default_rng(perm_seed).permutation(10)
            permuted = Dataset(images[order], labels[order], 10, "b")
            assert collision_study(detector, permuted) == baseline


def test_simulation_config_unknown_key_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("trials: 5\nepsilonn: 0.03\n")
    with pytest.raises(ConfigError, match="epsilonn"):
        SimulationConfig.from_file(path)


def test_simulation_config_roundtrip(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("name: demo\nattack: square\ntrials: 7\nseed: 3\n"
                    "detector: blacklight\nevasion_window: 15\n")
    config = SimulationConfig.from_file(path)
    assert config.attack == "square"
    assert config.trials == 7
    assert config.replace(trials=9).trials == 9
