"""Scalar workload dynamics ``x(k+1) = A x(k) - u(k) + d(k)``."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class PlantModel:
    growth: float = 1.0  # A, per-step multiplier on the backlog
    inflow: float | tuple[float, ...] = 5.0  # d, constant or one value per step

    def __post_init__(self):
        if not math.isfinite(self.growth) or self.growth < 1:
            raise ValueError(f"growth must be >= 1, got {self.growth}")
        d = self.inflow
        if isinstance(d, (list, tuple, np.ndarray)):
            d = tuple(float(v) for v in d)
            if not d:
                raise ValueError("inflow sequence is empty")
            object.__setattr__(self, "inflow", d)
            vals = d
        else:
            object.__setattr__(self, "inflow", float(d))
            vals = (float(d),)
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"inflow must be finite and non-negative, got {self.inflow}")

    def inflow_at(self, k: int) -> float:
        """Inflow at absolute step ``k``; a sequence holds its last value."""
        if isinstance(self.inflow, tuple):
            return self.inflow[min(k, len(self.inflow) - 1)]
        return self.inflow

    def inflows(self, k: int, n: int) -> np.ndarray:
        return np.array([self.inflow_at(k + t) for t in range(n)])

    def weights(self, n: int) -> np.ndarray:
        """Coefficient ``A**(n-1-t)`` of step ``t``'s input on the state n steps ahead."""
        return self.growth ** np.arange(n - 1, -1, -1, dtype=float)


@dataclass(frozen=True)
class WorkloadState:
    x: float
    k: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"time step must be non-negative, got {self.k}")
        if not math.isfinite(self.x):
            raise ValueError(f"workload must be finite, got {self.x}")


def step(state: WorkloadState, actual_hours: float, model: PlantModel) -> WorkloadState:
    if actual_hours < 0:
        raise ValueError(f"actual hours must be non-negative, got {actual_hours}")
    x = model.growth * state.x - actual_hours + model.inflow_at(state.k)
    return WorkloadState(x, state.k + 1)


def uncontrolled_terminal(x0: float, model: PlantModel, n: int, k: int = 0) -> float:
    """State after ``n`` steps with no work done: ``A^n x0 + sum_t A^(n-1-t) d(t)``."""
    return model.growth ** n * x0 + float(model.weights(n) @ model.inflows(k, n))


def predict_terminal(x0: float, planned_hours: Sequence[float], acceptance: Sequence[float],
                     model: PlantModel, k: int = 0) -> float:
    hours = np.asarray(planned_hours, dtype=float)
    beta = np.asarray(acceptance, dtype=float)
    if hours.ndim != 1 or hours.shape != beta.shape:
        raise ValueError(f"hours and acceptance must be equal-length sequences, "
                         f"got {hours.shape} and {beta.shape}")
    n = hours.size
    if n < 1:
        raise ValueError("horizon must be at least one step")
    return uncontrolled_terminal(x0, model, n, k) - float(model.weights(n) @ (beta * hours))
