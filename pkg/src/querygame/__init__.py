"""Attacker-vs-defender query games against image classifiers.

Evasion attacks (white-box PGD, black-box Square) issue rounds of queries
against trained victim models while stateful detectors (l-inf proximity,
locality-sensitive hashing, probabilistic content fingerprinting) watch the
query stream for suspiciously similar probes.
"""

from .arena import (EvasionPolicy, ExperimentStats, TrialOutcome,
                    collision_study, run_evasion_sweep, run_experiment,
                    run_series, run_trial)
from .attacks import (AttackBudget, AttackSpec, PgdSession, RoundResult,
                      SessionExhausted, SquareSession, make_session, pgd_step)
from .config import ConfigError, SimulationConfig
from .data import (DataSplit, Dataset, IngestionError, LabeledExample,
                   load_cifar10, make_split, standard_split)
from .detectors import (BlacklightDetector, LinfDetector, LshDetector,
                        QueryCache, Verdict, make_detector)
from .fingerprint import BlacklightParams, shared_hash_count
from .models import (Model, Prediction, TrainConfig, TrainingError,
                     evaluate_accuracy, load_model, save_model, train)
from .synthetic import write_synthetic_cifar10

__version__ = "0.1.0"
