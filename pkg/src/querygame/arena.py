"""The attacker-vs-defender game.

One trial: the attacker owns a session seeded on a correctly classified
image; before each adversarial round it may interleave benign queries drawn
without replacement from a detector-unseen pool (responses discarded). The
detector inspects each round's output. A flag on an adversarial candidate
ends the trial for the defender; a flag on a benign query is a false positive
and hands the attacker the win; misclassification before any flag wins for
the attacker; an exhausted session is a timeout.

Flags are checked before the attacker's own success test: a detected query is
considered blocked, so its outcome never benefits the attacker.

Seed derivation (documented contract): component k of trial i under master
seed m uses numpy SeedSequence([m, i, k]) with k=0 attack randomness, k=1
benign draw order, k=2 detector salt; trial seed-image selection uses
SeedSequence([m, 2561]) and the default data split uses SeedSequence([m,
3368]). Any single trial is therefore replayable in isolation.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .attacks import AttackSpec, SessionExhausted, default_budget, make_session
from .config import ConfigError, SimulationConfig
from .data import Dataset, DataSplit, load_cifar10, standard_split
from .detectors import make_detector
from .models import Model, evaluate_accuracy, load_model
from .querylog import QueryRecord

SEED_STREAM_ATTACK = 0
SEED_STREAM_BENIGN = 1
SEED_STREAM_DETECTOR = 2
SEED_SELECTION = 0xA01
SEED_SPLIT = 0xD28

WINNERS = ("attacker", "defender", "timeout")
DEFAULT_EVASION_WINDOWS = (0, 7, 15, 35)


@dataclass(frozen=True)
class EvasionPolicy:
    """Benign-query interleaving: `benign_rounds_between` no-op rounds before
    every adversarial round, drawn without replacement from `benign_pool`.
    Responses to benign queries are always discarded (attacker state is
    untouched by them)."""

    benign_rounds_between: int = 0
    benign_pool: Optional[Dataset] = None

    def __post_init__(self):
        if self.benign_rounds_between < 0:
            raise ValueError("benign_rounds_between must be non-negative")
        if self.benign_rounds_between > 0 and (
                self.benign_pool is None or len(self.benign_pool) == 0):
            raise ValueError("benign interleaving requires a non-empty benign_pool")


@dataclass(frozen=True)
class TrialOutcome:
    winner: str
    rounds: int
    adversarial_rounds: int
    adversarial_queries: int
    detection_round: Optional[int] = None
    false_positive: bool = False

    def __post_init__(self):
        if self.winner not in WINNERS:
            raise ValueError(f"winner must be one of {WINNERS}")
        if self.winner == "defender" and self.detection_round is None:
            raise ValueError("defender win requires detection_round")
        if self.false_positive and self.winner != "attacker":
            raise ValueError("a false positive ends the trial as an attacker win")


@dataclass(frozen=True)
class WinnerStats:
    count: int
    mean_rounds: float
    hw_rounds: float
    mean_queries: float
    hw_queries: float


@dataclass(frozen=True)
class ExperimentStats:
    trials: int
    attacker: WinnerStats
    defender: WinnerStats
    timeout: WinnerStats
    outcomes: Tuple[TrialOutcome, ...]


def half_width_95(values: Sequence[float]) -> float:
    """Normal-approximation 95% half-width, 1.96 * s / sqrt(n); 0 when n < 2."""
    if len(values) < 2:
        return 0.0
    return float(1.96 * np.std(values, ddof=1) / np.sqrt(len(values)))


def winner_stats(outcomes: Sequence[TrialOutcome], winner: str) -> WinnerStats:
    rounds = [o.rounds for o in outcomes if o.winner == winner]
    queries = [o.adversarial_queries for o in outcomes if o.winner == winner]
    if not rounds:
        return WinnerStats(0, 0.0, 0.0, 0.0, 0.0)
    return WinnerStats(
        count=len(rounds),
        mean_rounds=float(np.mean(rounds)), hw_rounds=half_width_95(rounds),
        mean_queries=float(np.mean(queries)), hw_queries=half_width_95(queries))


def aggregate(outcomes: Sequence[TrialOutcome]) -> ExperimentStats:
    return ExperimentStats(
        trials=len(outcomes),
        attacker=winner_stats(outcomes, "attacker"),
        defender=winner_stats(outcomes, "defender"),
        timeout=winner_stats(outcomes, "timeout"),
        outcomes=tuple(outcomes))


def _seed_entropy(seed) -> tuple:
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def run_trial(model: Model, session_factory: Callable, detector=None,
              evasion: Optional[EvasionPolicy] = None, seed=0,
              strict: bool = False, query_log: Optional[List[QueryRecord]] = None,
              trial_id: int = 0) -> TrialOutcome:
    """Play one game. `session_factory(seed_sequence)` must return a fresh
    attack session; `detector` is a fresh (or reset) detector or None."""
    evasion = evasion or EvasionPolicy()
    base = _seed_entropy(seed)
    session = session_factory(np.random.SeedSequence([*base, SEED_STREAM_ATTACK]))
    if model.predict(session.original).label != session.true_label:
        raise ValueError("attack seed image must be correctly classified by the model")

    pool = evasion.benign_pool
    benign_order = None
    benign_used = 0
    if evasion.benign_rounds_between > 0:
        benign_rng = np.random.default_rng(
            np.random.SeedSequence([*base, SEED_STREAM_BENIGN]))
        benign_order = benign_rng.permutation(len(pool))

    rounds = 0
    adv_rounds = 0
    adv_queries = 0

    def log(kind, image):
        if query_log is not None:
            query_log.append(QueryRecord(trial_id, rounds, kind, image))

    while True:
        for _ in range(evasion.benign_rounds_between):
            if benign_used >= len(pool):
                raise ConfigError(
                    f"benign pool exhausted after {benign_used} draws; this trial "
                    f"needs a pool of at least {benign_used + 1} images")
            image = pool.images[benign_order[benign_used]]
            benign_used += 1
            rounds += 1
            model.predict(image)  # response discarded by policy
            log("benign", image)
            if detector is not None and detector.check(image).flagged:
                return TrialOutcome("attacker", rounds, adv_rounds, adv_queries,
                                    false_positive=True)
        try:
            result = session.next_round(model)
        except SessionExhausted:
            return TrialOutcome("timeout", rounds, adv_rounds, adv_queries)
        rounds += 1
        adv_rounds += 1
        adv_queries += result.queries_issued
        if detector is not None:
            seen = result.query_images if strict else [result.candidate]
            flagged = False
            for image in seen:
                log("adversarial", image)
                if detector.check(image).flagged:
                    flagged = True
                    break
            if flagged:
                return TrialOutcome("defender", rounds, adv_rounds, adv_queries,
                                    detection_round=rounds)
        else:
            log("adversarial", result.candidate)
        if result.success:
            return TrialOutcome("attacker", rounds, adv_rounds, adv_queries)


def eligible_seed_indices(model: Model, attack_pool: Dataset) -> np.ndarray:
    """Indices of pool examples the model classifies correctly."""
    predicted = model.predict_batch(attack_pool.images)
    return np.flatnonzero(predicted == attack_pool.labels)


def detector_seed(master_seed: int, trial_index: int) -> int:
    ss = np.random.SeedSequence(
        [int(master_seed), int(trial_index), SEED_STREAM_DETECTOR])
    return int(ss.generate_state(1)[0])


def run_series(model: Model, attack: AttackSpec, attack_pool: Dataset,
               trials: int, master_seed: int,
               detector_factory: Optional[Callable[[int], object]] = None,
               evasion: Optional[EvasionPolicy] = None,
               strict: bool = False) -> ExperimentStats:
    """Run `trials` independent games and aggregate their outcomes.

    Seed images are sampled uniformly without replacement from the correctly
    classified part of `attack_pool`; each trial gets a fresh detector from
    `detector_factory(trial_index)` and seeds derived from the master seed.
    """
    eligible = eligible_seed_indices(model, attack_pool)
    if len(eligible) < trials:
        raise ConfigError(
            f"only {len(eligible)} of {len(attack_pool)} attack-seed images are "
            f"correctly classified; cannot run {trials} trials without replacement")
    selection_rng = np.random.default_rng(
        np.random.SeedSequence([int(master_seed), SEED_SELECTION]))
    chosen = selection_rng.choice(eligible, size=trials, replace=False)

    outcomes = []
    for i in range(trials):
        example = attack_pool[int(chosen[i])]
        factory = (lambda s, ex=example: make_session(attack, ex.image, ex.label, seed=s))
        detector = detector_factory(i) if detector_factory is not None else None
        outcomes.append(run_trial(
            model, factory, detector=detector, evasion=evasion,
            seed=(master_seed, i), strict=strict, trial_id=i))
    return aggregate(outcomes)


def load_experiment_inputs(config: SimulationConfig) -> Tuple[Model, DataSplit]:
    """Resolve the model checkpoint and data split named by a config."""
    if not config.model_checkpoint:
        raise ConfigError("config must name a model_checkpoint")
    try:
        model = load_model(config.model_checkpoint)
    except Exception as exc:
        raise ConfigError(f"cannot load checkpoint {config.model_checkpoint}: {exc}") from exc
    cifar = load_cifar10(config.dataset_root)
    split_seed = int(np.random.SeedSequence(
        [int(config.seed), SEED_SPLIT]).generate_state(1)[0])
    split = standard_split(cifar, seed=split_seed, eval_size=config.eval_size,
                           attack_seed_size=config.attack_seed_size,
                           benign_pool_size=config.benign_pool_size)
    return model, split


def build_attack_spec(config: SimulationConfig) -> AttackSpec:
    budget = default_budget(config.attack, epsilon=config.epsilon,
                            step_size=config.step_size,
                            iters_per_round=config.iters_per_round,
                            max_rounds=config.max_rounds)
    return AttackSpec(config.attack, budget)


def build_detector_factory(config: SimulationConfig):
    if config.detector in (None, "none"):
        return None

    def factory(trial_index: int):
        try:
            return make_detector(config.detector,
                                 seed=detector_seed(config.seed, trial_index),
                                 window=config.detector_window,
                                 **config.detector_params)
        except TypeError as exc:
            raise ConfigError(f"bad detector_params for {config.detector}: {exc}") from exc

    return factory


def run_experiment(config: SimulationConfig, model: Optional[Model] = None,
                   split: Optional[DataSplit] = None) -> ExperimentStats:
    """Run the experiment a SimulationConfig describes, fully reproducible
    from its seed. `model`/`split` may be injected to skip disk access."""
    if model is None or split is None:
        loaded_model, loaded_split = load_experiment_inputs(config)
        model = model or loaded_model
        split = split or loaded_split
    evasion = EvasionPolicy(config.evasion_window,
                            split.benign_pool if config.evasion_window else None)
    return run_series(model, build_attack_spec(config), split.attack_seeds,
                      trials=config.trials, master_seed=config.seed,
                      detector_factory=build_detector_factory(config),
                      evasion=evasion, strict=config.strict_detection)


def run_evasion_sweep(config: SimulationConfig, windows: Sequence[int] = DEFAULT_EVASION_WINDOWS,
                      model: Optional[Model] = None,
                      split: Optional[DataSplit] = None) -> List[Tuple[int, ExperimentStats]]:
    """One experiment per benign-interleaving window, sharing the master seed
    (so per-trial attack randomness is identical across windows)."""
    if model is None or split is None:
        loaded_model, loaded_split = load_experiment_inputs(config)
        model = model or loaded_model
        split = split or loaded_split
    results = []
    for window in windows:
        cfg = config.replace(evasion_window=int(window))
        results.append((int(window), run_experiment(cfg, model=model, split=split)))
    return results


def collision_study(detector, dataset: Dataset) -> int:
    """Stream every dataset image through a freshly reset detector in order;
    returns the number of flagged (false-positive) queries."""
    detector.reset()
    flags = 0
    for image in dataset.images:
        flags += bool(detector.check(image).flagged)
    return flags


def accuracy_table_rows(natural: Model, adversarial: Model, dataset: Dataset,
                        pgd: AttackSpec, square: AttackSpec, seed: int = 0,
                        max_attacked: Optional[int] = None) -> List[dict]:
    """Clean/PGD/Square accuracy rows for both training modes, in report order."""
    rows = []
    for training, model in (("natural", natural), ("adversarial", adversarial)):
        for attack_name, spec in (("none", None), ("pgd", pgd), ("square", square)):
            accuracy = evaluate_accuracy(
                model, dataset, attack=spec, seed=seed,
                max_examples=None if spec is None else max_attacked)
            rows.append({"training": training, "attack": attack_name,
                         "accuracy": accuracy})
    return rows
