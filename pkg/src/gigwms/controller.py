"""Offer selection: solve, verify, tighten; plus the receding-horizon loop.

For each worker the cheapest plan under that worker's acceptance bound is
computed and then certified by simulation against the whole group.  A plan
that fails certification is re-planned with a smaller ``epsilon`` (a stricter
bound on the chance that nobody accepts), and verified afresh with the next
entry of the sample schedule.  The certified plan with the lowest total wage
over all workers is offered, and only its first step is applied.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lp_solver import TIE_BREAKS, OfferPlan, canonical_plans, solve_problem2
from .plant import PlantModel, WorkloadState, step
from .verifier import (SAMPLERS, VerificationOutcome, VerifierConfig, level_count,
                       sample_count, trial_matrix)
from .worker_model import (TaskOffer, WorkerPopulation, acceptance_log_threshold,
                           sample_group_acceptance)

POLICIES = ("verified", "baseline")


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 3
    x_ref: float = 10.0
    epsilon0: float = 0.01
    gamma: float = 0.5
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    max_tighten_iters: int = 50
    tie_break: str = "track"
    lp_backend: str = "closed_form"
    sampler: str = "group"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0 < self.epsilon0 < 1:
            raise ValueError(f"epsilon0 must lie in (0, 1), got {self.epsilon0}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not math.isfinite(self.x_ref):
            raise ValueError("x_ref must be finite")
        if self.max_tighten_iters < 0:
            raise ValueError("max_tighten_iters must be non-negative")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"unknown tie_break {self.tie_break!r}")
        if self.lp_backend not in ("closed_form", "simplex"):
            raise ValueError(f"unknown lp_backend {self.lp_backend!r}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")

    @property
    def eta(self) -> float:
        return self.verifier.eta


@dataclass(frozen=True)
class Attempt:
    epsilon: float
    objective: float
    outcome: VerificationOutcome


@dataclass(frozen=True)
class ControlDecision:
    offer: TaskOffer
    plan: OfferPlan
    outcome: VerificationOutcome | None
    worker_index: int
    epsilon_final: float
    iterations: int = 0  # tightening steps taken
    history: tuple[Attempt, ...] = ()


class PlanningError(RuntimeError):
    def __init__(self, msg: str, worker_index: int | None = None,
                 outcome: VerificationOutcome | None = None, epsilon: float | None = None):
        super().__init__(msg)
        self.worker_index = worker_index
        self.outcome = outcome
        self.epsilon = epsilon


def _plans(x0: float, model: PlantModel, pop: WorkerPopulation, idx: np.ndarray,
           epsilon: float, cfg: MpcConfig, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Hours and wages, shape (len(idx), N), for the workers ``idx``."""
    n = len(pop)
    if cfg.lp_backend == "closed_form" and cfg.tie_break != "vertex":
        c = acceptance_log_threshold(epsilon, n)
        free = -(pop.nu[idx] - c) / pop.kappa
        return canonical_plans(x0, model, pop.kappa, pop.lam, free, cfg.horizon, cfg.x_ref,
                               cfg.tie_break, k)
    plans = [solve_problem2(x0, model, pop[int(i)], n, cfg, epsilon, k, backend="simplex",
                            tie_break=cfg.tie_break) for i in idx]
    return np.array([p.hours for p in plans]), np.array([p.wages for p in plans])


def _decision(hours, wages, eps, i, outcome, l, history) -> ControlDecision:
    plan = OfferPlan.from_arrays(hours, wages, eps)
    return ControlDecision(TaskOffer(plan.hours[0], plan.wages[0]), plan, outcome, int(i),
                           eps, l, tuple(history))


def plan_verified_batch(x0: float, model: PlantModel, pop: WorkerPopulation, cfg: MpcConfig,
                        indices: Sequence[int], rngs: Sequence[np.random.Generator],
                        k: int = 0) -> list[ControlDecision | PlanningError]:
    """Run the solve/verify/tighten loop for several workers side by side.

    Worker ``indices[j]`` uses only ``rngs[j]``, so each result equals what
    :func:`plan_verified` returns for that worker alone.  Failures are
    returned in place, not raised.
    """
    idx = np.asarray(indices, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= len(pop)):
        raise IndexError(f"worker index out of range for population of {len(pop)}")
    results: list = [None] * idx.size
    histories: list[list[Attempt]] = [[] for _ in idx]
    active = np.arange(idx.size)
    eps = cfg.epsilon0
    l = 0
    while active.size:
        hours, wages = _plans(x0, model, pop, idx[active], eps, cfg, k)
        trial = l + 1  # schedule index; the schedule is defined from 1
        M, m = sample_count(trial, cfg.verifier), level_count(trial, cfg.verifier.b)
        held = trial_matrix(hours, wages, x0, model, pop, cfg.x_ref, M,
                            [rngs[j] for j in active], cfg.sampler, k)
        failures = M - held.sum(axis=1)
        objectives = wages.sum(axis=1)
        still = []
        for row, j in enumerate(active):
            out = VerificationOutcome(bool(failures[row] <= m), trial, M, int(failures[row]), m)
            histories[j].append(Attempt(eps, float(objectives[row]), out))
            if out.accepted:
                results[j] = _decision(hours[row], wages[row], eps, idx[j], out, l, histories[j])
            elif l >= cfg.max_tighten_iters:
                results[j] = PlanningError(
                    f"worker {idx[j]}: no certified plan after {l} tightenings "
                    f"(epsilon={eps:.3g}, {out.failures}/{out.trials} trials failed)",
                    int(idx[j]), out, eps)
            else:
                still.append(j)
        active = np.array(still, dtype=int)
        l += 1
        eps *= cfg.gamma
    return results


def plan_verified(x0: float, model: PlantModel, pop: WorkerPopulation, cfg: MpcConfig,
                  worker_index: int, rng: np.random.Generator, k: int = 0) -> ControlDecision:
    (res,) = plan_verified_batch(x0, model, pop, cfg, [worker_index], [rng], k)
    if isinstance(res, PlanningError):
        raise res
    return res


def _cheapest(decisions: Sequence[ControlDecision]) -> ControlDecision:
    best = decisions[0]
    for d in decisions[1:]:
        if d.plan.objective < best.plan.objective:
            best = d
    return best


def select_offer(x0: float, model: PlantModel, pop: WorkerPopulation, cfg: MpcConfig,
                 rng: np.random.Generator, k: int = 0) -> ControlDecision:
    """Certified plan with the lowest total wage across all workers.

    Each worker gets its own child stream spawned from ``rng``.  Ties go to
    the lowest worker index.  Workers that exhaust the tightening budget are
    skipped; if all do, the first failure is raised.
    """
    rngs = rng.spawn(len(pop))
    results = plan_verified_batch(x0, model, pop, cfg, range(len(pop)), rngs, k)
    ok = [r for r in results if isinstance(r, ControlDecision)]
    if not ok:
        raise results[0]
    return _cheapest(ok)


def plan_baseline(x0: float, model: PlantModel, pop: WorkerPopulation, cfg: MpcConfig,
                  k: int = 0) -> ControlDecision:
    """Cheapest plan at ``epsilon0`` without certification."""
    idx = np.arange(len(pop))
    hours, wages = _plans(x0, model, pop, idx, cfg.epsilon0, cfg, k)
    objectives = wages.sum(axis=1)
    i = int(np.argmin(objectives))  # first minimum -> lowest index
    return _decision(hours[i], wages[i], cfg.epsilon0, i, None, 0, ())


@dataclass
class Trajectory:
    x: list[float]
    decisions: list[ControlDecision]
    beta: list[int]
    policy: str

    @property
    def final(self) -> float:
        return self.x[-1]

    def records(self) -> list[dict]:
        out = []
        for k, (d, b) in enumerate(zip(self.decisions, self.beta)):
            out.append({
                "k": k,
                "x": self.x[k],
                "worker_index": d.worker_index,
                "u_hat": d.offer.hours,
                "p": d.offer.wage,
                "beta": b,
                "epsilon_final": d.epsilon_final,
                "l_star": d.iterations,
                "M_l": d.outcome.trials if d.outcome else None,
                "failures": d.outcome.failures if d.outcome else None,
            })
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())


def decide(x: float, model: PlantModel, pop: WorkerPopulation, cfg: MpcConfig, policy: str,
           rng: np.random.Generator, k: int = 0) -> ControlDecision:
    if policy == "verified":
        return select_offer(x, model, pop, cfg, rng, k)
    if policy == "baseline":
        return plan_baseline(x, model, pop, cfg, k)
    raise ValueError(f"unknown policy {policy!r}")


def run_closed_loop(x0: float, model: PlantModel, pop: WorkerPopulation, cfg: MpcConfig,
                    steps: int, policy: str, rng: np.random.Generator,
                    plant_rng: np.random.Generator | None = None,
                    force_beta: int | None = None,
                    stop_at_target: bool = False) -> Trajectory:
    """Receding-horizon simulation over ``steps`` periods.

    ``rng`` feeds the planner; ``plant_rng`` the workers' actual decisions
    (spawned from ``rng`` when omitted).  ``force_beta`` overrides the
    sampled acceptance.  With ``stop_at_target`` the loop ends early once the
    workload is at or below ``x_ref``.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if plant_rng is None:
        (plant_rng,) = rng.spawn(1)
    state = WorkloadState(float(x0), 0)
    traj = Trajectory([state.x], [], [], policy)
    for _ in range(steps):
        if stop_at_target and state.x <= cfg.x_ref:
            break
        dec = decide(state.x, model, pop, cfg, policy, rng, state.k)
        accepted = sample_group_acceptance(dec.offer, pop, plant_rng)
        if force_beta is not None:
            accepted = int(force_beta)
        state = step(state, accepted * dec.offer.hours, model)
        traj.x.append(state.x)
        traj.decisions.append(dec)
        traj.beta.append(accepted)
    return traj
