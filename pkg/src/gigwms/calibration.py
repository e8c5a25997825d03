"""Fitting the acceptance model to stated-preference survey data.

Each survey cell offers ``hours`` for ``wage`` and records the share ``z`` of
respondents who would accept.  Under the logit model ``logit(z)`` is linear in
``(hours, wage, 1)``, so ordinary least squares on the transformed data
identifies ``(kappa, lam, nu)``.  A Gauss-Newton refinement in probability
space is available for comparison.
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, logit

from .worker_model import SURVEY_KAPPA, SURVEY_LAMBDA, SURVEY_NU, WorkerParams

DEFAULT_RESPONDENTS = 500

# Questionnaire: task length in minutes -> offered wage levels (JPY).
SURVEY_GRID_MINUTES: dict[int, tuple[int, ...]] = {
    30: (500, 550, 600, 650, 700),
    60: (1000, 1100, 1200, 1300, 1400),
    90: (1500, 1650, 1800, 1950, 2100),
    120: (2000, 2200, 2400, 2600, 2800),
}


class RankDeficiencyError(ValueError):
    pass


def survey_grid() -> list[tuple[float, float]]:
    """The 20 (hours, wage) cells of the questionnaire."""
    return [(m / 60.0, float(p)) for m, wages in SURVEY_GRID_MINUTES.items() for p in wages]


@dataclass(frozen=True)
class SurveyPoint:
    hours: float
    wage: float
    accept_ratio: float

    def __post_init__(self):
        if not 0 <= self.accept_ratio <= 1:
            raise ValueError(f"accept_ratio must lie in [0, 1], got {self.accept_ratio}")
        if not self.hours > 0:
            raise ValueError(f"hours must be positive, got {self.hours}")


@dataclass(frozen=True)
class FittedModel:
    kappa: float
    lam: float
    nu: float
    residual: float
    point_count: int
    method: str = "logit_ls"

    @property
    def valid(self) -> bool:
        return self.kappa < 0 and self.lam > 0

    def worker(self) -> WorkerParams:
        return WorkerParams(self.kappa, self.lam, self.nu)

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "lambda": self.lam, "nu": self.nu,
                "residual": self.residual, "point_count": self.point_count}

    @classmethod
    def from_dict(cls, data: dict) -> "FittedModel":
        return cls(float(data["kappa"]), float(data["lambda"]), float(data["nu"]),
                   float(data.get("residual", 0.0)), int(data.get("point_count", 0)))


# Coefficients reported for the Tokyo food-delivery survey; the raw answers
# are not available, so they ship as constants.
SURVEY_MODEL = FittedModel(SURVEY_KAPPA, SURVEY_LAMBDA, SURVEY_NU, float("nan"), 20)


def _design(points: Sequence[SurveyPoint]) -> np.ndarray:
    return np.array([[p.hours, p.wage, 1.0] for p in points])


def fit(points: Sequence[SurveyPoint], respondents: int = DEFAULT_RESPONDENTS) -> FittedModel:
    """Logit-space least squares.

    Ratios of exactly 0 or 1 are pulled in to ``1/(2R)`` and ``1 - 1/(2R)``.
    Raises :class:`RankDeficiencyError` when hours, wage and the intercept
    cannot be separated.
    """
    if len(points) < 3:
        raise RankDeficiencyError(f"need at least 3 survey points, got {len(points)}")
    X = _design(points)
    if np.linalg.matrix_rank(X) < 3:
        raise RankDeficiencyError("survey points are collinear in (hours, wage)")
    floor = 1.0 / (2 * respondents)
    z = np.clip([p.accept_ratio for p in points], floor, 1 - floor)
    y = logit(z)
    # Column scaling keeps the normal equations well conditioned (wages ~1e3).
    scale = np.abs(X).max(axis=0)
    Xs = X / scale
    coef = np.linalg.solve(Xs.T @ Xs, Xs.T @ y) / scale
    resid = y - X @ coef
    return FittedModel(float(coef[0]), float(coef[1]), float(coef[2]),
                       float(resid @ resid), len(points))


def refine_gauss_newton(points: Sequence[SurveyPoint], start: FittedModel | None = None,
                        max_iter: int = 100, step_tol: float = 1e-10) -> FittedModel:
    """Least squares on the acceptance ratios themselves (probability space)."""
    start = start or fit(points)
    X = _design(points)
    z = np.array([p.accept_ratio for p in points])
    scale = np.abs(X).max(axis=0)
    Xs = X / scale
    theta = np.array([start.kappa, start.lam, start.nu]) * scale
    for _ in range(max_iter):
        prob = expit(Xs @ theta)
        J = Xs * (prob * (1 - prob))[:, None]
        r = z - prob
        delta, *_ = np.linalg.lstsq(J, r, rcond=None)
        theta = theta + delta
        if np.max(np.abs(delta)) <= step_tol * (1 + np.max(np.abs(theta))):
            break
    coef = theta / scale
    r = z - expit(X @ coef)
    return FittedModel(float(coef[0]), float(coef[1]), float(coef[2]), float(r @ r),
                       len(points), method="gauss_newton")


def predict_ratio(model: FittedModel, hours, wage):
    v = model.kappa * np.asarray(hours, dtype=float) + model.lam * np.asarray(wage, dtype=float) + model.nu
    out = expit(v)
    return float(out) if np.ndim(out) == 0 else out


def generate_synthetic_survey(truth: WorkerParams, grid: Iterable[tuple[float, float]],
                              respondents: int, rng: np.random.Generator) -> list[SurveyPoint]:
    """Binomial acceptance counts per cell under ``truth``; ratio = count / respondents."""
    if respondents < 1:
        raise ValueError(f"respondents must be >= 1, got {respondents}")
    grid = list(grid)
    probs = expit([truth.kappa * u + truth.lam * p + truth.nu for u, p in grid])
    counts = rng.binomial(respondents, probs)
    return [SurveyPoint(float(u), float(p), int(c) / respondents) for (u, p), c in zip(grid, counts)]


def surface_grid(model: FittedModel, hours: Sequence[float],
                 wages: Sequence[float]) -> list[tuple[float, float, float]]:
    H, P = np.meshgrid(np.asarray(hours, float), np.asarray(wages, float), indexing="ij")
    Z = predict_ratio(model, H, P)
    return list(zip(H.ravel().tolist(), P.ravel().tolist(), np.ravel(Z).tolist()))


# ---------------------------------------------------------------- file formats

def read_aggregated_csv(path: str | Path) -> list[SurveyPoint]:
    """``hours_min,wage_jpy,accept_ratio`` rows; minutes become hours."""
    with open(path, newline="") as fh:
        return [SurveyPoint(float(r["hours_min"]) / 60.0, float(r["wage_jpy"]),
                            float(r["accept_ratio"])) for r in csv.DictReader(fh)]


def write_aggregated_csv(points: Sequence[SurveyPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hours_min", "wage_jpy", "accept_ratio"])
        for p in points:
            w.writerow([_num(p.hours * 60.0), _num(p.wage), repr(float(p.accept_ratio))])


def aggregate_raw(answers: Iterable[tuple[str, float, float]],
                  grid_minutes: dict[int, Sequence[float]] | None = None) -> list[SurveyPoint]:
    """Turn minimum-acceptable-wage answers into per-cell acceptance ratios.

    A respondent accepts cell ``(minutes, wage)`` iff their stated minimum for
    that task length is at most ``wage``.  Cells default to the questionnaire
    grid; lengths missing from it use the distinct wages seen in the answers.
    """
    grid_minutes = SURVEY_GRID_MINUTES if grid_minutes is None else grid_minutes
    by_len: dict[float, list[float]] = defaultdict(list)
    for _, minutes, min_wage in answers:
        by_len[float(minutes)].append(float(min_wage))
    points = []
    for minutes in sorted(by_len):
        stated = np.array(by_len[minutes])
        levels = grid_minutes.get(int(minutes)) if minutes == int(minutes) else None
        levels = sorted(set(levels if levels is not None else stated.tolist()))
        for wage in levels:
            points.append(SurveyPoint(minutes / 60.0, float(wage),
                                      float(np.mean(stated <= wage))))
    return points


def read_raw_csv(path: str | Path) -> list[SurveyPoint]:
    """``respondent_id,hours_min,min_wage_jpy`` rows, aggregated."""
    with open(path, newline="") as fh:
        rows = [(r["respondent_id"], float(r["hours_min"]), float(r["min_wage_jpy"]))
                for r in csv.DictReader(fh)]
    return aggregate_raw(rows)


def read_survey(path: str | Path) -> list[SurveyPoint]:
    """Aggregated or raw survey CSV, told apart by the header."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    cols = {h.strip() for h in header}
    if {"hours_min", "wage_jpy", "accept_ratio"} <= cols:
        return read_aggregated_csv(path)
    if {"respondent_id", "hours_min", "min_wage_jpy"} <= cols:
        return read_raw_csv(path)
    raise ValueError(f"{path}: unrecognised survey header {header}")


def save_model(model: FittedModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path: str | Path) -> FittedModel:
    return FittedModel.from_dict(json.loads(Path(path).read_text()))


def write_surface_csv(rows: Sequence[tuple[float, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hours", "wage", "probability"])
        for h, p, z in rows:
            w.writerow([repr(float(h)), repr(float(p)), repr(float(z))])


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))

