"""Adaptive pruning: population search over lottery-ticket masks.

For each task a population of candidate masks is sampled under the store's
eligibility rules, each candidate short-trains from the same fresh
initializer, and the winner of a blended accuracy/sparsity score is trained
in full. The winner's mask and weights feed the quantization stage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import SelectionWarning
from .network import DenseWeights, TrainConfig, evaluate, train_masked, xavier_init
from .seeding import derive_seed, rng_from
from .store import TaskMask, WeightSlotStore, sample_candidate_full

# rng stream roles, combined as (seed, task_id, role, index)
ROLE_INIT = 0
ROLE_CANDIDATE = 1
ROLE_FULLTRAIN = 2


@dataclass
class Candidate:
    """One population member: mask plus its short-trained weights and scores."""

    index: int
    mask: TaskMask
    weights: DenseWeights
    accuracy: float
    sparsity: float


@dataclass(frozen=True)
class PruneConfig:
    population: int = 16
    alpha: float = 0.9
    beta: float = 0.1
    v_min: float = 0.45
    v_max: float = 0.85
    short_epochs: int = 5
    full_epochs: int = 50
    t_l: int = 4
    psi_min: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population must be >= 1")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta == 0:
            raise ValueError("need alpha, beta >= 0 with alpha + beta > 0")
        if not (0.0 <= self.v_min <= self.v_max <= 1.0):
            raise ValueError("need 0 <= v_min <= v_max <= 1")
        if self.short_epochs < 0 or self.full_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.t_l < 1 or not (1 <= self.psi_min <= 32):
            raise ValueError("t_l must be >= 1 and psi_min in [1, 32]")


@dataclass
class PruneLog:
    """Per-task record of the population search, kept for reports."""

    task_id: int
    accuracies: tuple[float, ...]
    sparsities: tuple[float, ...]
    scores: tuple[float, ...]
    chosen: int
    winner_layer_sparsity: tuple[float, ...]


def select_best(accuracies, sparsities, alpha, beta) -> int:
    """Index of the highest alpha*A/max(A) + beta*S/max(S); ties to lowest.

    A zero max turns that term into zero for every candidate rather than
    dividing by it.
    """
    A = np.asarray(accuracies, dtype=np.float64)
    S = np.asarray(sparsities, dtype=np.float64)
    if A.size == 0 or A.shape != S.shape:
        raise ValueError("need equal-length nonempty score lists")
    a_term = A / A.max() if A.max() > 0 else np.zeros_like(A)
    s_term = S / S.max() if S.max() > 0 else np.zeros_like(S)
    return int(np.argmax(alpha * a_term + beta * s_term))


def _scores(accuracies, sparsities, alpha, beta):
    A = np.asarray(accuracies, dtype=np.float64)
    S = np.asarray(sparsities, dtype=np.float64)
    a_term = A / A.max() if A.max() > 0 else np.zeros_like(A)
    s_term = S / S.max() if S.max() > 0 else np.zeros_like(S)
    return tuple(float(v) for v in alpha * a_term + beta * s_term)


def make_candidate(index, task_id, store: WeightSlotStore, spec, init_weights,
                   data, cfg: PruneConfig, train_cfg: TrainConfig) -> Candidate:
    """Sample, short-train, and score candidate `index`.

    Every candidate derives its own rng streams from (seed, task, index), so
    population members are independent of generation order.
    """
    rng = rng_from(cfg.seed, task_id, ROLE_CANDIDATE, index)
    mask = sample_candidate_full(store, cfg.v_min, cfg.v_max, cfg.psi_min, cfg.t_l, rng)
    short_cfg = replace(
        train_cfg,
        epochs=cfg.short_epochs,
        seed=derive_seed(cfg.seed, task_id, ROLE_CANDIDATE, index),
    )
    weights, _ = train_masked(spec, init_weights.copy(), list(mask),
                              (data.x_train, data.y_train), short_cfg)
    accuracy = evaluate(spec, weights, list(mask), data.x_val, data.y_val)
    sparsity = store.hypothetical_sparsity(mask).weighted
    return Candidate(index, mask, weights, accuracy, sparsity)


def adaptive_prune(task_id, store: WeightSlotStore, spec, data,
                   cfg: PruneConfig, train_cfg: TrainConfig, sink=None):
    """Population search for one task; returns (mask, weights, accuracy).

    The returned weights are the winner's after full training on the task's
    train split, and the accuracy is measured on its validation split. `sink`,
    when given, receives one PruneLog.
    """
    init_weights = xavier_init(spec, derive_seed(cfg.seed, task_id, ROLE_INIT, 0))
    population = [
        make_candidate(i, task_id, store, spec, init_weights, data, cfg, train_cfg)
        for i in range(cfg.population)
    ]

    accuracies = tuple(c.accuracy for c in population)
    sparsities = tuple(c.sparsity for c in population)
    if max(accuracies) == 0.0:
        warnings.warn(
            f"task {task_id}: every candidate scored zero accuracy; "
            "selecting on sparsity alone",
            SelectionWarning,
            stacklevel=2,
        )
    chosen = select_best(accuracies, sparsities, cfg.alpha, cfg.beta)
    winner = population[chosen]

    full_cfg = replace(
        train_cfg,
        epochs=cfg.full_epochs,
        seed=derive_seed(cfg.seed, task_id, ROLE_FULLTRAIN, chosen),
    )
    weights, _ = train_masked(spec, winner.weights, list(winner.mask),
                              (data.x_train, data.y_train), full_cfg)
    q_ref = evaluate(spec, weights, list(winner.mask), data.x_val, data.y_val)

    if sink is not None:
        sink(PruneLog(
            task_id,
            accuracies,
            sparsities,
            _scores(accuracies, sparsities, cfg.alpha, cfg.beta),
            chosen,
            store.hypothetical_sparsity(winner.mask).per_layer,
        ))
    return winner.mask, weights, q_ref
