"""Logit acceptance model for individual gig-workers and for a worker group.

A worker scores an offer of ``hours`` for ``wage`` with the linear utility
``kappa * hours + lam * wage + nu`` and accepts with the logistic probability
of that score.  A group accepts an offer when at least one member does.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

# Coefficients identified from the crowdsourced survey (hours, JPY).
SURVEY_KAPPA = -7.253
SURVEY_LAMBDA = 0.006385
SURVEY_NU = -1.216

# Individual offsets are drawn uniformly on nu_mean +/- NU_SPREAD * lam.
NU_SPREAD = 100.0


@dataclass(frozen=True)
class WorkerParams:
    kappa: float  # utility per hour, negative
    lam: float  # utility per JPY, positive
    nu: float = 0.0  # individual offset

    def validate(self) -> None:
        if not (math.isfinite(self.kappa) and math.isfinite(self.lam) and math.isfinite(self.nu)):
            raise ValueError(f"non-finite worker parameters: {self}")
        if self.kappa >= 0:
            raise ValueError(f"kappa must be negative, got {self.kappa}")
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


@dataclass(frozen=True)
class TaskOffer:
    hours: float
    wage: float

    def __post_init__(self):
        for name in ("hours", "wage"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"offer {name} must be finite and non-negative, got {v}")


class WorkerPopulation:
    """Workers sharing ``kappa`` and ``lam``; only the offsets ``nu`` differ."""

    def __init__(self, kappa: float, lam: float, nu: Sequence[float]):
        nu = np.asarray(nu, dtype=float).reshape(-1)
        if nu.size < 1:
            raise ValueError("a population needs at least one worker")
        if not np.all(np.isfinite(nu)):
            raise ValueError("worker offsets must be finite")
        self.kappa = float(kappa)
        self.lam = float(lam)
        self.nu = nu
        self.nu.setflags(write=False)

    @classmethod
    def from_workers(cls, workers: Sequence[WorkerParams]) -> "WorkerPopulation":
        if not workers:
            raise ValueError("a population needs at least one worker")
        kappa, lam = workers[0].kappa, workers[0].lam
        if any(w.kappa != kappa or w.lam != lam for w in workers):
            raise ValueError("all workers in a population must share kappa and lambda")
        return cls(kappa, lam, [w.nu for w in workers])

    @property
    def workers(self) -> list[WorkerParams]:
        return [WorkerParams(self.kappa, self.lam, float(v)) for v in self.nu]

    def __len__(self) -> int:
        return self.nu.size

    def __getitem__(self, i: int) -> WorkerParams:
        return WorkerParams(self.kappa, self.lam, float(self.nu[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, WorkerPopulation):
            return NotImplemented
        return (self.kappa == other.kappa and self.lam == other.lam
                and np.array_equal(self.nu, other.nu))

    def __repr__(self) -> str:
        return f"WorkerPopulation(kappa={self.kappa}, lam={self.lam}, n={len(self)})"

    def to_dict(self, nu_mean: float | None = None) -> dict:
        return {
            "kappa": self.kappa,
            "lambda": self.lam,
            "nu_mean": float(np.mean(self.nu)) if nu_mean is None else nu_mean,
            "nu_values": [float(v) for v in self.nu],
        }


def utility(offer: TaskOffer, worker: WorkerParams) -> float:
    return worker.kappa * offer.hours + worker.lam * offer.wage + worker.nu


def accept_prob(offer: TaskOffer, worker: WorkerParams) -> float:
    return float(expit(utility(offer, worker)))


def log_group_reject(hours, wages, pop: WorkerPopulation) -> np.ndarray:
    """Log-probability that nobody in ``pop`` accepts, broadcast over offers.

    ``hours`` and ``wages`` may be arrays of any (matching) shape; the result
    has that shape.  Uses ``log(1 / (1 + e^V)) = -logaddexp(0, V)`` so large
    utilities of either sign stay finite.
    """
    hours = np.asarray(hours, dtype=float)
    wages = np.asarray(wages, dtype=float)
    v = pop.kappa * hours[..., None] + pop.lam * wages[..., None] + pop.nu
    return -np.logaddexp(0.0, v).sum(axis=-1)


def group_accept_prob(offer: TaskOffer, pop: WorkerPopulation) -> float:
    return float(-np.expm1(log_group_reject(offer.hours, offer.wage, pop)))


def individual_accept_probs(offer: TaskOffer, pop: WorkerPopulation) -> np.ndarray:
    return expit(pop.kappa * offer.hours + pop.lam * offer.wage + pop.nu)


def sample_group_acceptance(offer: TaskOffer, pop: WorkerPopulation,
                            rng: np.random.Generator) -> int:
    """Draw every worker's decision and report whether anyone accepted.

    All ``len(pop)`` uniforms are consumed on every call so the stream
    position does not depend on the outcome.
    """
    draws = rng.random(len(pop))
    return int(np.any(draws < individual_accept_probs(offer, pop)))


def acceptance_log_threshold(epsilon: float, n: int) -> float:
    """Utility each worker must reach so the group refuses with prob <= epsilon.

    Equals ``ln(epsilon**(-1/n) - 1)``, evaluated without cancellation for
    large ``n``.
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return math.log(math.expm1(-math.log(epsilon) / n))


def max_hours_bound(wage: float, worker: WorkerParams, epsilon: float, n: int) -> float:
    """Largest hours at ``wage`` keeping this worker's refusal below epsilon**(1/n).

    If every worker of an ``n``-strong group is offered no more than their own
    bound, the whole group refuses with probability at most ``epsilon``.
    """
    if worker.kappa >= 0:
        raise ValueError(f"kappa must be negative for an hours bound, got {worker.kappa}")
    c = acceptance_log_threshold(epsilon, n)
    return -(worker.lam * wage + worker.nu - c) / worker.kappa


def sample_population(kappa: float, lam: float, nu_mean: float, n: int,
                      rng: np.random.Generator, spread: float = NU_SPREAD) -> WorkerPopulation:
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    half = spread * lam
    if half == 0:
        nu = np.full(n, float(nu_mean))
    else:
        nu = rng.uniform(nu_mean - half, nu_mean + half, size=n)
    return WorkerPopulation(kappa, lam, nu)


def load_population(path: str | Path, n: int | None = None,
                    rng: np.random.Generator | None = None) -> WorkerPopulation:
    """Read a population file; explicit ``nu_values`` win over sampling."""
    data = json.loads(Path(path).read_text())
    return population_from_dict(data, n=n, rng=rng)


def population_from_dict(data: dict, n: int | None = None,
                         rng: np.random.Generator | None = None) -> WorkerPopulation:
    kappa, lam = float(data["kappa"]), float(data["lambda"])
    if data.get("nu_values"):
        return WorkerPopulation(kappa, lam, data["nu_values"])
    if n is None or rng is None:
        raise ValueError("population has no nu_values; need n and rng to sample offsets")
    return sample_population(kappa, lam, float(data["nu_mean"]), n, rng,
                             spread=float(data.get("nu_spread", NU_SPREAD)))


def save_population(pop: WorkerPopulation, path: str | Path, nu_mean: float | None = None) -> None:
    Path(path).write_text(json.dumps(pop.to_dict(nu_mean), indent=2) + "\n")
