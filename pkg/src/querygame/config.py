"""Simulation configuration.

A config is a flat YAML mapping with the documented keys below; unknown keys
are hard errors so typos never silently fall back to defaults. CLI flags
(--seed, --trials, --detector, --attack, --evasion-window, --dataset-root)
override the corresponding file keys.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from . import attacks


class ConfigError(RuntimeError):
    """Bad or inconsistent simulation configuration."""


@dataclass(frozen=True)
class SimulationConfig:
    # experiment identity and inputs
    name: str = "simulation"
    model_checkpoint: Optional[str] = None
    dataset_root: Optional[str] = None
    # attack
    attack: str = "pgd"
    epsilon: float = attacks.DEFAULT_EPSILON
    step_size: float = attacks.DEFAULT_STEP_SIZE
    iters_per_round: Optional[int] = None  # None -> attack's default (pgd 2, square 5)
    max_rounds: int = attacks.DEFAULT_MAX_ROUNDS
    # defense
    detector: str = "none"
    detector_window: Optional[int] = 50
    detector_params: dict = field(default_factory=dict)
    strict_detection: bool = False
    # game
    evasion_window: int = 0
    trials: int = 100
    seed: int = 0
    # data split sizes carved from the test set
    eval_size: int = 9000
    attack_seed_size: int = 500
    benign_pool_size: int = 500

    def __post_init__(self):
        if self.attack not in ("pgd", "square"):
            raise ConfigError(f"attack must be pgd or square, not {self.attack!r}")
        if self.detector not in ("none", "linf", "lsh", "blacklight"):
            raise ConfigError(f"unknown detector {self.detector!r}")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if self.evasion_window < 0:
            raise ConfigError("evasion_window must be non-negative")

    def replace(self, **changes) -> "SimulationConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_names(cls):
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_dict(cls, data: dict, source: str = "config") -> "SimulationConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: expected a mapping, got {type(data).__name__}")
        unknown = set(data) - set(cls.field_names())
        if unknown:
            raise ConfigError(f"{source}: unknown keys {sorted(unknown)}; "
                              f"known keys are {sorted(cls.field_names())}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> "SimulationConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        return cls.from_dict(data or {}, source=str(path))
