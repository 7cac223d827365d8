"""Evasion attacks as stateful sessions that emit rounds.

A round issues a bounded number of model queries and produces one candidate
image. PGD spends one gradient query per inner step plus one prediction query
to test the candidate; Square spends one score query per random-search
proposal plus the same prediction query. Every candidate stays inside the
l-inf ball of radius epsilon around the original and inside [0, 1].
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F

DEFAULT_EPSILON = 8.0 / 255.0
DEFAULT_STEP_SIZE = 2.0 / 255.0
DEFAULT_PGD_ITERS_PER_ROUND = 2
DEFAULT_SQUARE_ITERS_PER_ROUND = 5
DEFAULT_MAX_ROUNDS = 1000

# Random-search patch fraction starts at 0.05 and halves at these proposal
# counts (not rescaled to the budget).
SQUARE_P_INIT = 0.05
SQUARE_P_SCHEDULE = (10, 50, 200, 500, 1000, 2000, 4000, 6000, 8000)


class SessionExhausted(RuntimeError):
    """The session has already emitted max_rounds rounds."""


@dataclass(frozen=True)
class AttackBudget:
    norm: str = "linf"
    epsilon: float = DEFAULT_EPSILON
    step_size: float = DEFAULT_STEP_SIZE
    iters_per_round: int = DEFAULT_PGD_ITERS_PER_ROUND
    max_rounds: int = DEFAULT_MAX_ROUNDS

    def __post_init__(self):
        if self.norm != "linf":
            raise ValueError(f"only the linf norm is supported, got {self.norm!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.epsilon > 0 and not 0.0 < self.step_size <= self.epsilon:
            raise ValueError("step_size must satisfy 0 < step_size <= epsilon")
        if self.iters_per_round < 1 or self.max_rounds < 1:
            raise ValueError("iters_per_round and max_rounds must be positive")


@dataclass(frozen=True)
class AttackSpec:
    """Which attack to run and under what budget."""

    name: str
    budget: AttackBudget = AttackBudget()

    def __post_init__(self):
        if self.name not in ("pgd", "square"):
            raise ValueError(f"unknown attack {self.name!r}; expected pgd or square")


def default_budget(attack_name: str, epsilon: float = DEFAULT_EPSILON,
                   step_size: float = DEFAULT_STEP_SIZE,
                   iters_per_round: Optional[int] = None,
                   max_rounds: int = DEFAULT_MAX_ROUNDS) -> AttackBudget:
    """Budget with the attack's conventional queries-per-round default."""
    if iters_per_round is None:
        iters_per_round = (DEFAULT_PGD_ITERS_PER_ROUND if attack_name == "pgd"
                           else DEFAULT_SQUARE_ITERS_PER_ROUND)
    return AttackBudget(epsilon=epsilon, step_size=step_size,
                        iters_per_round=iters_per_round, max_rounds=max_rounds)


@dataclass(eq=False)
class RoundResult:
    candidate: np.ndarray
    queries_issued: int
    success: bool
    round_index: int
    # inputs of every query this round, candidate last (for strict-mode
    # detectors and replay logs)
    query_images: List[np.ndarray] = field(default_factory=list)


def _ball_bounds(original: np.ndarray, epsilon: float):
    lo = np.maximum(original - epsilon, 0.0).astype(np.float32)
    hi = np.minimum(original + epsilon, 1.0).astype(np.float32)
    return lo, hi


def pgd_step(model, current: np.ndarray, original: np.ndarray, label: int,
             budget: AttackBudget) -> np.ndarray:
    """One signed-gradient ascent step, projected onto the epsilon ball and
    [0, 1]. Consumes exactly one gradient query."""
    grad = model.loss_gradient(current, label)
    stepped = current.astype(np.float32) + np.float32(budget.step_size) * np.sign(grad).astype(np.float32)
    lo, hi = _ball_bounds(original, budget.epsilon)
    return np.clip(stepped, lo, hi)


class _SessionBase:
    def __init__(self, original: np.ndarray, true_label: int,
                 budget: AttackBudget, seed: int):
        self.original = np.asarray(original, dtype=np.float32).copy()
        self.original.setflags(write=False)
        self.true_label = int(true_label)
        self.budget = budget
        self.rng = np.random.default_rng(seed)
        self.rounds_done = 0
        self.queries_total = 0

    @property
    def exhausted(self) -> bool:
        return self.rounds_done >= self.budget.max_rounds

    def _require_capacity(self):
        if self.exhausted:
            raise SessionExhausted(
                f"session already emitted {self.rounds_done} rounds")

    def _check_ball(self, candidate: np.ndarray):
        gap = float(np.max(np.abs(candidate - self.original))) if candidate.size else 0.0
        if gap > self.budget.epsilon + 1e-6:
            raise RuntimeError(f"candidate left the epsilon ball: {gap} > {self.budget.epsilon}")
        if candidate.size and (candidate.min() < 0.0 or candidate.max() > 1.0):
            raise RuntimeError("candidate left [0, 1]")

    def _finish_round(self, model, candidate: np.ndarray,
                      query_images: List[np.ndarray]) -> RoundResult:
        self._check_ball(candidate)
        prediction = model.predict(candidate)
        query_images.append(candidate.copy())
        self.rounds_done += 1
        queries = len(query_images)
        self.queries_total += queries
        return RoundResult(candidate=candidate.copy(), queries_issued=queries,
                           success=prediction.label != self.true_label,
                           round_index=self.rounds_done, query_images=query_images)


class PgdSession(_SessionBase):
    """White-box session: starts from a uniformly perturbed copy of the
    original (no query spent) and takes iters_per_round gradient steps per
    round."""

    def __init__(self, original, true_label, budget: AttackBudget, seed: int):
        super().__init__(original, true_label, budget, seed)
        noise = self.rng.uniform(-budget.epsilon, budget.epsilon,
                                 size=self.original.shape)
        self.current = np.clip(self.original + noise, 0.0, 1.0).astype(np.float32)

    def next_round(self, model) -> RoundResult:
        self._require_capacity()
        query_images = []
        for _ in range(self.budget.iters_per_round):
            query_images.append(self.current.copy())
            self.current = pgd_step(model, self.current, self.original,
                                    self.true_label, self.budget)
        return self._finish_round(model, self.current, query_images)


class SquareSession(_SessionBase):
    """Black-box random-search session; sees only predictions and scores.

    Each iteration proposes a square-patch sign perturbation (the very first
    proposal is the stripe initialization), spends one score query on it, and
    keeps it only if the margin loss score_true - max_other decreases.
    """

    def __init__(self, original, true_label, budget: AttackBudget, seed: int):
        super().__init__(original, true_label, budget, seed)
        self._delta = None
        self._best_loss = np.inf
        self._proposals_made = 0
        self.accepted_losses: List[float] = []

    def _margin_loss(self, scores: np.ndarray) -> float:
        others = np.delete(scores, self.true_label)
        return float(scores[self.true_label] - others.max())

    def _patch_side(self) -> int:
        p = SQUARE_P_INIT
        for threshold in SQUARE_P_SCHEDULE:
            if self._proposals_made > threshold:
                p /= 2.0
        h, w = self.original.shape[:2]
        side = int(round(np.sqrt(p * h * w)))
        return max(1, min(side, h, w))

    def _propose_delta(self) -> np.ndarray:
        eps = self.budget.epsilon
        h, w, c = self.original.shape
        if self._delta is None:
            # vertical +-eps stripes, one sign per column and channel
            signs = self.rng.choice([-1.0, 1.0], size=(1, w, c))
            return (eps * signs * np.ones((h, 1, 1))).astype(np.float32)
        side = self._patch_side()
        top = int(self.rng.integers(0, h - side + 1))
        left = int(self.rng.integers(0, w - side + 1))
        signs = self.rng.choice([-1.0, 1.0], size=(1, 1, c))
        delta = self._delta.copy()
        delta[top:top + side, left:left + side, :] = (eps * signs).astype(np.float32)
        return delta

    def _candidate_for(self, delta: np.ndarray) -> np.ndarray:
        return np.clip(self.original + delta, 0.0, 1.0).astype(np.float32)

    def next_round(self, model) -> RoundResult:
        self._require_capacity()
        query_images = []
        for _ in range(self.budget.iters_per_round):
            delta = self._propose_delta()
            proposal = self._candidate_for(delta)
            query_images.append(proposal)
            loss = self._margin_loss(model.predict(proposal).scores)
            self._proposals_made += 1
            if loss < self._best_loss:
                self._best_loss = loss
                self._delta = delta
                self.accepted_losses.append(loss)
        candidate = (self._candidate_for(self._delta) if self._delta is not None
                     else self.original.copy())
        return self._finish_round(model, candidate, query_images)


def make_session(spec: AttackSpec, original: np.ndarray, true_label: int, seed: int):
    if spec.name == "pgd":
        return PgdSession(original, true_label, spec.budget, seed)
    if spec.name == "square":
        return SquareSession(original, true_label, spec.budget, seed)
    raise ValueError(f"unknown attack {spec.name!r}")


def pgd_perturb_batch(module: torch.nn.Module, x: torch.Tensor, y: torch.Tensor,
                      epsilon: float, step_size: float, iters: int,
                      generator: Optional[torch.Generator] = None,
                      start: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Batched PGD used by adversarial training and attacked evaluation.

    `x` is (n, c, h, w) in [0, 1]. Matches the per-image pgd_step recurrence;
    `start` overrides the random start (used by the equivalence test).
    """
    lo = (x - epsilon).clamp(0.0, 1.0)
    hi = (x + epsilon).clamp(0.0, 1.0)
    if start is None:
        noise = torch.empty_like(x)
        noise.uniform_(-epsilon, epsilon, generator=generator)
        xb = (x + noise).clamp(0.0, 1.0)
    else:
        xb = start.clone()
    for _ in range(iters):
        xb = xb.detach().requires_grad_(True)
        loss = F.cross_entropy(module(xb), y)
        grad = torch.autograd.grad(loss, xb)[0]
        with torch.no_grad():
            xb = torch.clamp(xb + step_size * torch.sign(grad), min=lo, max=hi)
    return xb.detach()
