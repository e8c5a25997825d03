"""Deterministic offer planning as a linear program.

With the group assumed to accept every step, choosing hours and wages over
the horizon is an LP: minimise total wages subject to the terminal workload
reaching the target and each step's hours staying under the worker's
acceptance bound (an affine function of that step's wage).

Two backends are provided.  ``"simplex"`` builds the LP and solves it with a
dense two-phase simplex (Bland's rule).  ``"closed_form"`` exploits the
structure of the problem (one coupling constraint per step, one terminal
constraint) and is vectorised over workers for the Monte-Carlo harness.  Both
end in the same canonical plan, see :func:`canonical_plans`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .plant import PlantModel, predict_terminal, uncontrolled_terminal
from .worker_model import WorkerParams, acceptance_log_threshold, max_hours_bound

logger = logging.getLogger(__name__)

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"

# Wages enter the LP in kJPY so both variable blocks have O(1) coefficients.
WAGE_SCALE = 1e-3

TIE_BREAKS = ("track", "equalize", "front", "vertex")


class InfeasibleProblemError(RuntimeError):
    pass


@dataclass
class LinearProgram:
    """minimise ``c @ x`` subject to ``A_ub @ x <= b_ub`` and ``x >= 0``."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        self.A_ub = np.asarray(self.A_ub, dtype=float).reshape(-1, self.c.size)
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        if self.A_ub.shape[0] != self.b_ub.size:
            raise ValueError(f"A_ub has {self.A_ub.shape[0]} rows but b_ub has {self.b_ub.size}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A_ub))
                and np.all(np.isfinite(self.b_ub))):
            raise ValueError("LP data must be finite")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_constraints(self) -> int:
        return self.b_ub.size

    def to_text(self) -> str:
        """Plain-text tableau dump for debugging."""
        names = self.names or [f"x{j}" for j in range(self.n_vars)]
        width = max(10, max(len(s) for s in names) + 1)
        head = "".join(f"{s:>{width}}" for s in names)
        lines = [f"{'':8}{head}{'rhs':>{width}}",
                 f"{'min':8}" + "".join(f"{v:>{width}.5g}" for v in self.c)]
        for i, (row, rhs) in enumerate(zip(self.A_ub, self.b_ub)):
            lines.append(f"{'c' + str(i):8}" + "".join(f"{v:>{width}.5g}" for v in row)
                         + f"{'<= ' + format(rhs, '.5g'):>{width}}")
        lines.append(f"{'bounds':8}all variables >= 0")
        return "\n".join(lines)


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0


def _pivot(T: np.ndarray, r: int, j: int) -> None:
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run_simplex(T: np.ndarray, basis: list[int], n_cols: int, tol: float,
                 max_iter: int) -> tuple[str, int]:
    """Minimise over the tableau in place; the last row holds reduced costs."""
    m = len(basis)
    for it in range(max_iter):
        d = T[-1, :n_cols]
        entering = np.flatnonzero(d < -tol)
        if entering.size == 0:
            return OPTIMAL, it
        j = int(entering[0])
        col = T[:m, j]
        rows = np.flatnonzero(col > tol)
        if rows.size == 0:
            return UNBOUNDED, it
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, r, j)
        basis[r] = j
    raise RuntimeError(f"simplex did not terminate in {max_iter} pivots")


def solve_lp(lp: LinearProgram, tol: float = 1e-9, max_iter: int = 10_000) -> LPResult:
    """Two-phase dense simplex with Bland's rule.

    Infeasible and unbounded problems are reported through ``status``.
    Identical input gives an identical vertex.
    """
    A, b, c = lp.A_ub, lp.b_ub, lp.c
    m, n = A.shape
    neg = b < 0
    n_art = int(neg.sum())
    n_cols = n + m + n_art
    T = np.zeros((m + 1, n_cols + 1))
    basis = []
    art = n + m
    for i in range(m):
        sign = -1.0 if neg[i] else 1.0
        T[i, :n] = sign * A[i]
        T[i, n + i] = sign
        T[i, -1] = sign * b[i]
        if neg[i]:
            T[i, art] = 1.0
            basis.append(art)
            art += 1
        else:
            basis.append(n + i)

    iters = 0
    if n_art:
        T[-1, n + m:n_cols] = 1.0
        for i in range(m):
            if basis[i] >= n + m:
                T[-1] -= T[i]
        status, it = _run_simplex(T, basis, n_cols, tol, max_iter)
        iters += it
        if -T[-1, -1] > tol * max(1.0, np.abs(b).max()):
            return LPResult(INFEASIBLE, iterations=iters)
        # Drive zero-level artificials out of the basis; drop redundant rows.
        keep = []
        for i in range(m):
            if basis[i] >= n + m:
                cand = np.flatnonzero(np.abs(T[i, :n + m]) > tol)
                if cand.size == 0:
                    continue
                _pivot(T, i, int(cand[0]))
                basis[i] = int(cand[0])
            keep.append(i)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[i] for i in keep]
        T = np.hstack([T[:, :n + m], T[:, -1:]])
        m = len(basis)

    n_cols = T.shape[1] - 1
    T[-1] = 0.0
    T[-1, :n] = c
    for i, bj in enumerate(basis):
        if bj < n and c[bj] != 0:
            T[-1] -= c[bj] * T[i]
    status, it = _run_simplex(T, basis, n_cols, tol, max_iter)
    iters += it
    if status != OPTIMAL:
        return LPResult(status, iterations=iters)
    x = np.zeros(n_cols)
    for i, bj in enumerate(basis):
        x[bj] = T[i, -1]
    x = np.maximum(x[:n], 0.0)
    return LPResult(OPTIMAL, x, float(c @ x), iters)


@dataclass(frozen=True)
class OfferPlan:
    hours: tuple[float, ...]
    wages: tuple[float, ...]
    objective: float
    epsilon_used: float

    def __post_init__(self):
        if len(self.hours) != len(self.wages):
            raise ValueError("hours and wages must have equal length")
        if min(self.hours) < 0 or min(self.wages) < 0:
            raise ValueError("plan entries must be non-negative")

    @classmethod
    def from_arrays(cls, hours, wages, epsilon: float) -> "OfferPlan":
        hours = np.maximum(np.asarray(hours, dtype=float), 0.0)
        wages = np.maximum(np.asarray(wages, dtype=float), 0.0)
        return cls(tuple(hours.tolist()), tuple(wages.tolist()), float(wages.sum()), float(epsilon))

    def __len__(self) -> int:
        return len(self.hours)

    def to_dict(self) -> dict:
        return {"hours": list(self.hours), "wages": list(self.wages),
                "objective": self.objective, "epsilon_used": self.epsilon_used}

    @classmethod
    def from_dict(cls, data: dict) -> "OfferPlan":
        return cls.from_arrays(data["hours"], data["wages"], data.get("epsilon_used", float("nan")))


@dataclass(frozen=True)
class PlanningProblem:
    """Problem data shared by both backends.

    ``free_hours`` is the hours bound at zero wage and ``slope`` the extra
    hours allowed per JPY; ``required`` is how many (growth-weighted) hours
    must be worked for the terminal workload to meet ``x_ref``.
    """

    x0: float
    model: PlantModel
    worker: WorkerParams
    n: int
    horizon: int
    x_ref: float
    epsilon: float
    k: int = 0

    @property
    def slope(self) -> float:
        return -self.worker.lam / self.worker.kappa

    @property
    def free_hours(self) -> float:
        c = acceptance_log_threshold(self.epsilon, self.n)
        return -(self.worker.nu - c) / self.worker.kappa

    @property
    def weights(self) -> np.ndarray:
        return self.model.weights(self.horizon)

    @property
    def required(self) -> float:
        return uncontrolled_terminal(self.x0, self.model, self.horizon, self.k) - self.x_ref


def _check(worker: WorkerParams, epsilon: float, horizon: int) -> None:
    if worker.kappa >= 0:
        raise ValueError(f"kappa must be negative, got {worker.kappa}")
    if worker.lam <= 0:
        raise ValueError(f"lambda must be positive, got {worker.lam}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")


def build_problem2(x0: float, model: PlantModel, worker: WorkerParams, n: int, cfg,
                   epsilon: float, k: int = 0, max_hours: float | None = None,
                   max_wage: float | None = None) -> LinearProgram:
    """LP over ``(p(0..N-1) [kJPY], u(0..N-1) [h])``.

    Rows: the terminal workload target, one hours-vs-wage coupling per step,
    then any optional per-step caps.
    """
    N = cfg.horizon
    _check(worker, epsilon, N)
    prob = PlanningProblem(x0, model, worker, n, N, cfg.x_ref, epsilon, k)
    w = prob.weights
    slope_scaled = prob.slope / WAGE_SCALE
    c = np.concatenate([np.ones(N), np.zeros(N)])
    rows = [np.concatenate([np.zeros(N), -w])]
    rhs = [-prob.required]
    for t in range(N):
        row = np.zeros(2 * N)
        row[t] = -slope_scaled
        row[N + t] = 1.0
        rows.append(row)
        rhs.append(prob.free_hours)
    for cap, offset in ((max_wage, 0), (max_hours, N)):
        if cap is None:
            continue
        scale = WAGE_SCALE if offset == 0 else 1.0
        for t in range(N):
            row = np.zeros(2 * N)
            row[offset + t] = 1.0
            rows.append(row)
            rhs.append(cap * scale)
    names = [f"p{t}" for t in range(N)] + [f"u{t}" for t in range(N)]
    return LinearProgram(c, np.array(rows), np.array(rhs), names,
                         meta={"problem": prob, "wage_scale": WAGE_SCALE,
                               "extra_caps": max_hours is not None or max_wage is not None})


def _isotonic(y: np.ndarray) -> np.ndarray:
    """Least-squares non-decreasing fit along the last axis (min-max formula)."""
    B, L = y.shape
    if L == 0:
        return y.copy()
    csum = np.concatenate([np.zeros((B, 1)), np.cumsum(y, axis=1)], axis=1)
    out = np.empty_like(y)
    for t in range(L):
        lower = np.full(B, -np.inf)
        for s in range(t + 1):
            upper = np.full(B, np.inf)
            for u in range(t, L):
                upper = np.minimum(upper, (csum[:, u + 1] - csum[:, s]) / (u - s + 1))
            lower = np.maximum(lower, upper)
        out[:, t] = lower
    return out


def canonical_plans(x0: float, model: PlantModel, kappa: float, lam: float,
                    free_hours: np.ndarray, horizon: int, x_ref: float,
                    tie_break: str = "track", k: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-wage plans for a batch of workers, with a fixed tie-break.

    ``free_hours`` has one entry per worker.  Returns ``(hours, wages)`` of
    shape ``(B, horizon)``.  Whenever the optimum is not unique (growth 1,
    or a target reachable at zero wage) the plan is chosen as follows:

    * target reachable for free: the fewest hours, earliest steps first;
    * otherwise ``"track"`` keeps the predicted workload as close to
      ``x_ref`` as possible at every intermediate step (least squares),
      ``"equalize"`` spreads hours evenly, ``"front"`` puts all paid hours
      on the first step.
    """
    if tie_break not in ("track", "equalize", "front"):
        raise ValueError(f"closed-form backend supports track/equalize/front, got {tie_break!r}")
    h = np.atleast_1d(np.asarray(free_hours, dtype=float))
    B, N = h.size, horizon
    a = -lam / kappa
    w = model.weights(N)
    d = model.inflows(k, N)
    R = uncontrolled_terminal(x0, model, N, k) - x_ref
    lo = np.maximum(h, 0.0)
    hours = np.zeros((B, N))
    wages = np.zeros((B, N))

    free = (h >= 0) & (R <= h * w.sum())
    if free.any():
        rem = np.full(int(free.sum()), R)
        for t in range(N):
            u = np.clip(rem / w[t], 0.0, h[free])
            hours[free, t] = u
            rem = rem - w[t] * u
    forced = (h < 0) & (R <= 0)
    wages[forced] = (-h[forced] / a)[:, None]

    paid = ~(free | forced)
    if paid.any():
        hp, lp = h[paid], lo[paid]
        if model.growth > 1 or tie_break == "front" or N == 1:
            u = np.repeat(lp[:, None], N, axis=1)
            u[:, 0] = (R - lp * w[1:].sum()) / w[0]
        elif tie_break == "equalize":
            u = np.full((hp.size, N), R / N)
        else:
            # growth == 1: cumulative hours U_t should track x0 + sum(d) - x_ref
            steps = np.arange(1, N)
            target = x0 + np.cumsum(d)[:-1] - x_ref
            y = target[None, :] - lp[:, None] * steps[None, :]
            W = np.clip(_isotonic(y), 0.0, (R - N * lp)[:, None])
            U = np.concatenate([np.zeros((hp.size, 1)), W + lp[:, None] * steps,
                                np.full((hp.size, 1), R)], axis=1)
            u = np.maximum(np.diff(U, axis=1), lp[:, None])
        hours[paid] = u
        wages[paid] = np.maximum((u - hp[:, None]) / a, 0.0)
    return hours, wages


def _canonicalise(raw_hours: np.ndarray, raw_wages: np.ndarray, prob: PlanningProblem,
                  tie_break: str) -> tuple[np.ndarray, np.ndarray]:
    hours, wages = canonical_plans(prob.x0, prob.model, prob.worker.kappa, prob.worker.lam,
                                   np.array([prob.free_hours]), prob.horizon, prob.x_ref,
                                   tie_break, prob.k)
    raw_obj, obj = raw_wages.sum(), wages[0].sum()
    if abs(raw_obj - obj) > 1e-6 * max(1.0, abs(obj)):
        raise RuntimeError(f"canonical plan objective {obj} differs from LP optimum {raw_obj}")
    return hours[0], wages[0]


def solve_problem2(x0: float, model: PlantModel, worker: WorkerParams, n: int, cfg,
                   epsilon: float, k: int = 0, backend: str = "simplex",
                   tie_break: str | None = None, max_hours: float | None = None,
                   max_wage: float | None = None, debug: bool = False) -> OfferPlan:
    """Cheapest plan for one worker's acceptance bound at tightening level epsilon."""
    tie_break = tie_break or getattr(cfg, "tie_break", "track")
    if tie_break not in TIE_BREAKS:
        raise ValueError(f"unknown tie_break {tie_break!r}")
    caps = max_hours is not None or max_wage is not None
    if backend == "closed_form":
        if caps or tie_break == "vertex":
            raise ValueError("closed-form backend supports neither extra caps nor raw vertices")
        _check(worker, epsilon, cfg.horizon)
        prob = PlanningProblem(x0, model, worker, n, cfg.horizon, cfg.x_ref, epsilon, k)
        hours, wages = canonical_plans(x0, model, worker.kappa, worker.lam,
                                       np.array([prob.free_hours]), cfg.horizon, cfg.x_ref,
                                       tie_break, k)
        return OfferPlan.from_arrays(hours[0], wages[0], epsilon)
    if backend != "simplex":
        raise ValueError(f"unknown backend {backend!r}")

    lp = build_problem2(x0, model, worker, n, cfg, epsilon, k, max_hours, max_wage)
    if debug:
        logger.debug("problem 2 LP:\n%s", lp.to_text())
    res = solve_lp(lp)
    if res.status != OPTIMAL:
        raise InfeasibleProblemError(f"offer LP is {res.status}")
    N = cfg.horizon
    wages = res.x[:N] / WAGE_SCALE
    hours = res.x[N:]
    if tie_break != "vertex" and not caps:
        hours, wages = _canonicalise(hours, wages, lp.meta["problem"], tie_break)
    return OfferPlan.from_arrays(hours, wages, epsilon)


def plan_satisfies_bounds(plan: OfferPlan, worker: WorkerParams, n: int,
                          tol: float = 1e-9) -> bool:
    return all(u <= max_hours_bound(p, worker, plan.epsilon_used, n) + tol
               for u, p in zip(plan.hours, plan.wages))


def terminal_under_full_acceptance(plan: OfferPlan, x0: float, model: PlantModel,
                                   k: int = 0) -> float:
    return predict_terminal(x0, plan.hours, np.ones(len(plan)), model, k)
