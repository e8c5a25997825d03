"""Sample-based certification that a plan meets the terminal chance constraint.

A candidate plan is simulated ``M_l`` times with random group acceptance; it
is certified when at most ``m_l`` simulations end above the target.  The
schedule ``(m_l, M_l)`` grows with the attempt index ``l`` such that, summed
over all attempts, the chance of certifying a plan whose violation
probability exceeds ``eta`` is below ``delta``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import zeta as _hurwitz_zeta

from .lp_solver import OfferPlan
from .plant import PlantModel, predict_terminal, uncontrolled_terminal
from .worker_model import (TaskOffer, WorkerPopulation, group_accept_prob,
                           individual_accept_probs, log_group_reject,
                           sample_group_acceptance)

# Terminal workloads within this of the target count as meeting it; LP
# solutions hit the target only up to rounding.
FEAS_TOL = 1e-6

SAMPLERS = ("group", "individual")


@dataclass(frozen=True)
class VerifierConfig:
    eta: float = 0.05
    delta: float = 1e-8
    alpha: float = 2.0
    b: float = 1.0

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not self.b > 0:
            raise ValueError(f"b must be positive, got {self.b}")


@dataclass(frozen=True)
class VerificationOutcome:
    accepted: bool
    iteration: int
    trials: int
    failures: int
    level: int

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "iteration": self.iteration, "trials": self.trials,
                "failures": self.failures, "level": self.level}


@lru_cache(maxsize=None)
def zeta(alpha: float) -> float:
    if alpha == 2:
        return math.pi ** 2 / 6
    return float(_hurwitz_zeta(alpha, 1))


def level_count(l: int, b: float) -> int:
    if l < 1:
        raise ValueError(f"attempt index must be >= 1, got {l}")
    return math.floor(b * l)


@lru_cache(maxsize=4096)
def sample_count(l: int, cfg: VerifierConfig) -> int:
    m = level_count(l, cfg.b)
    log_term = math.log(zeta(cfg.alpha)) + cfg.alpha * math.log(l) - math.log(cfg.delta)
    return math.ceil((m + log_term + math.sqrt(2 * m * log_term)) / cfg.eta)


def run_trial(plan: OfferPlan, x0: float, model: PlantModel, pop: WorkerPopulation,
              x_ref: float, rng: np.random.Generator, k: int = 0) -> int:
    """One simulated execution of ``plan``: 1 if the terminal target holds."""
    if len(plan) < 1:
        raise ValueError("plan must cover at least one step")
    beta = [sample_group_acceptance(TaskOffer(u, p), pop, rng)
            for u, p in zip(plan.hours, plan.wages)]
    return int(predict_terminal(x0, plan.hours, beta, model, k) <= x_ref + FEAS_TOL)


def trial_matrix(hours: np.ndarray, wages: np.ndarray, x0: float, model: PlantModel,
                 pop: WorkerPopulation, x_ref: float, trials: int,
                 rngs: Sequence[np.random.Generator], sampler: str = "group",
                 k: int = 0) -> np.ndarray:
    """Trial outcomes (True = target held) for a batch of plans, shape (B, trials).

    Plan ``i`` (row ``i`` of ``hours``/``wages``) draws only from ``rngs[i]``,
    so its outcomes do not depend on the rest of the batch.  ``"group"`` draws
    one uniform per step against the exact group refusal probability;
    ``"individual"`` draws one per worker per step.  Either way the number of
    uniforms consumed per call is fixed.
    """
    hours = np.atleast_2d(hours)
    wages = np.atleast_2d(wages)
    B, N = hours.shape
    w = model.weights(N)
    slack = uncontrolled_terminal(x0, model, N, k) - x_ref - FEAS_TOL
    work = hours * w  # growth-weighted hours, (B, N)
    if sampler == "group":
        reject = np.exp(log_group_reject(hours, wages, pop))  # (B, N)
        draws = np.stack([g.random((trials, N)) for g in rngs])  # (B, M, N)
        beta = draws >= reject[:, None, :]
    elif sampler == "individual":
        probs = np.stack([_indiv(hours[i], wages[i], pop) for i in range(B)])  # (B, N, n)
        beta = np.stack([
            (g.random((trials, N, len(pop))) < probs[i][None]).any(axis=-1)
            for i, g in enumerate(rngs)])
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    # terminal = uncontrolled - sum(w * beta * u) must not exceed x_ref
    done = np.zeros(beta.shape[:2])
    for t in range(N):
        done += beta[:, :, t] * work[:, t:t + 1]
    return done >= slack


def count_failures(hours, wages, x0, model, pop, x_ref, trials, rngs, sampler="group", k=0):
    held = trial_matrix(hours, wages, x0, model, pop, x_ref, trials, rngs, sampler, k)
    return (~held).sum(axis=1)


def _indiv(hours: np.ndarray, wages: np.ndarray, pop: WorkerPopulation) -> np.ndarray:
    """Per-step, per-worker acceptance probabilities, shape (N, n)."""
    return np.stack([individual_accept_probs(TaskOffer(float(u), float(p)), pop)
                     for u, p in zip(hours, wages)])


def verify(plan: OfferPlan, l: int, x0: float, model: PlantModel, pop: WorkerPopulation,
           x_ref: float, cfg: VerifierConfig, rng: np.random.Generator,
           sampler: str = "group", k: int = 0) -> VerificationOutcome:
    """Run ``M_l`` trials of ``plan``; accept iff at most ``m_l`` fail."""
    m, M = level_count(l, cfg.b), sample_count(l, cfg)
    failures = int(count_failures(np.array([plan.hours]), np.array([plan.wages]), x0, model,
                                  pop, x_ref, M, [rng], sampler, k)[0])
    return VerificationOutcome(failures <= m, l, M, failures, m)


def early_exit_decision(trial_results: Sequence[int], level: int) -> tuple[bool, int]:
    """Scan trial results (1 = held) and stop once failures exceed ``level``.

    Returns the decision and the number of trials inspected.
    """
    failures = 0
    for i, ok in enumerate(trial_results, 1):
        failures += 1 - int(ok)
        if failures > level:
            return False, i
    return True, len(trial_results)


def exact_violation_probability(plan: OfferPlan, x0: float, model: PlantModel,
                                pop: WorkerPopulation, x_ref: float, k: int = 0) -> float:
    """Probability that the terminal workload misses ``x_ref``, by enumerating
    every acceptance pattern over the horizon (2**N terms)."""
    N = len(plan)
    if N > 16:
        raise ValueError(f"enumeration over 2**{N} patterns is not supported")
    offers = [TaskOffer(u, p) for u, p in zip(plan.hours, plan.wages)]
    accept = [group_accept_prob(o, pop) for o in offers]
    refuse = [math.exp(log_group_reject(o.hours, o.wage, pop)) for o in offers]
    total = 0.0
    for beta in itertools.product((0, 1), repeat=N):
        if predict_terminal(x0, plan.hours, beta, model, k) > x_ref + FEAS_TOL:
            total += math.prod(accept[t] if b else refuse[t] for t, b in enumerate(beta))
    return total
