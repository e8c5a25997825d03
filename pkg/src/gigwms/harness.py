"""Monte-Carlo comparison of the certified and uncertified controllers.

Every run draws a fresh worker population (unless ``fixed_population``) and
simulates each policy on it for ``steps`` periods.  Both policies see the
same population and the same stream of worker decisions, so differences
between arms come from the offers alone.  Streams are keyed by
``(master_seed, run, purpose)``, which makes a run's result independent of
which process executes it.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .controller import POLICIES, MpcConfig, PlanningError, run_closed_loop
from .plant import PlantModel
from .verifier import FEAS_TOL, VerifierConfig
from .worker_model import NU_SPREAD, WorkerPopulation, sample_population

logger = logging.getLogger(__name__)

# purpose tags for seed derivation
_POPULATION, _PLANT, _PLAN = 0, 1, 2
_FIXED_POPULATION_RUN = 2 ** 31 - 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PopulationSpec:
    kappa: float
    lam: float
    nu_mean: float
    n: int = 100
    nu_spread: float = NU_SPREAD
    nu_values: tuple[float, ...] | None = None

    def draw(self, rng: np.random.Generator) -> WorkerPopulation:
        if self.nu_values:
            return WorkerPopulation(self.kappa, self.lam, self.nu_values)
        return sample_population(self.kappa, self.lam, self.nu_mean, self.n, rng, self.nu_spread)


@dataclass(frozen=True)
class ExperimentConfig:
    population: PopulationSpec
    plant: PlantModel
    x0: float
    mpc: MpcConfig
    runs: int = 200
    steps: int = 10
    master_seed: int = 0
    policies: tuple[str, ...] = POLICIES
    fixed_population: bool = False
    workers: int = 1
    keep_trajectories: bool = False

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not self.policies or any(p not in POLICIES for p in self.policies):
            raise ConfigError(f"policies must be drawn from {POLICIES}, got {self.policies}")

    def replace(self, **changes) -> "ExperimentConfig":
        d = copy.copy(self.__dict__)
        d.update(changes)
        return ExperimentConfig(**d)

    def to_dict(self, include_execution: bool = True) -> dict:
        """JSON form; ``include_execution=False`` drops the pool size, which
        does not affect results."""
        m, v = self.mpc, self.mpc.verifier
        inflow = self.plant.inflow
        return {
            "population": {
                "kappa": self.population.kappa,
                "lambda": self.population.lam,
                "nu_mean": self.population.nu_mean,
                "n": self.population.n,
                "nu_spread": self.population.nu_spread,
                "nu_values": list(self.population.nu_values) if self.population.nu_values else None,
            },
            "plant": {"growth": self.plant.growth,
                      "inflow": list(inflow) if isinstance(inflow, tuple) else inflow,
                      "x0": self.x0},
            "mpc": {"horizon": m.horizon, "x_ref": m.x_ref, "eta": v.eta,
                    "epsilon0": m.epsilon0, "gamma": m.gamma, "delta": v.delta,
                    "alpha": v.alpha, "b": v.b, "max_tighten_iters": m.max_tighten_iters,
                    "tie_break": m.tie_break, "lp_backend": m.lp_backend,
                    "sampler": m.sampler},
            "runs": self.runs,
            "steps": self.steps,
            "master_seed": self.master_seed,
            "policies": list(self.policies),
            "fixed_population": self.fixed_population,
            "keep_trajectories": self.keep_trajectories,
            **({"workers": self.workers} if include_execution else {}),
        }


_SECTIONS = {
    "population": {"kappa", "lambda", "nu_mean", "n", "nu_spread", "nu_values"},
    "plant": {"growth", "inflow", "x0"},
    "mpc": {"horizon", "x_ref", "eta", "epsilon0", "gamma", "delta", "alpha", "b",
            "max_tighten_iters", "tie_break", "lp_backend", "sampler"},
}
_TOP = {"runs", "steps", "master_seed", "policies", "fixed_population", "workers",
        "keep_trajectories"} | set(_SECTIONS)


def default_config_dict() -> dict:
    text = resources.files("gigwms").joinpath("data/default_config.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a (possibly partial) dict layered over the defaults."""
    unknown = set(data) - _TOP
    for sec, keys in _SECTIONS.items():
        if isinstance(data.get(sec), dict):
            unknown |= {f"{sec}.{k}" for k in set(data[sec]) - keys}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    d = _merge(default_config_dict(), data)
    try:
        pop, plant, mpc = d["population"], d["plant"], d["mpc"]
        nu_values = pop.get("nu_values")
        population = PopulationSpec(
            float(pop["kappa"]), float(pop["lambda"]), float(pop["nu_mean"]),
            int(len(nu_values) if nu_values else pop["n"]), float(pop["nu_spread"]),
            tuple(float(v) for v in nu_values) if nu_values else None)
        inflow = plant["inflow"]
        model = PlantModel(float(plant["growth"]),
                           tuple(inflow) if isinstance(inflow, list) else float(inflow))
        verifier = VerifierConfig(float(mpc["eta"]), float(mpc["delta"]), float(mpc["alpha"]),
                                  float(mpc["b"]))
        mpc_cfg = MpcConfig(int(mpc["horizon"]), float(mpc["x_ref"]), float(mpc["epsilon0"]),
                            float(mpc["gamma"]), verifier, int(mpc["max_tighten_iters"]),
                            mpc["tie_break"], mpc["lp_backend"], mpc["sampler"])
        return ExperimentConfig(population, model, float(plant["x0"]), mpc_cfg,
                                int(d["runs"]), int(d["steps"]), int(d["master_seed"]),
                                tuple(d["policies"]), bool(d["fixed_population"]),
                                int(d["workers"]), bool(d["keep_trajectories"]))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(data)


def stream(master_seed: int, run: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(run, purpose)))


def population_for_run(cfg: ExperimentConfig, run: int) -> WorkerPopulation:
    r = _FIXED_POPULATION_RUN if cfg.fixed_population else run
    return cfg.population.draw(stream(cfg.master_seed, r, _POPULATION))


def _run_one(args: tuple[ExperimentConfig, int]) -> dict:
    cfg, run = args
    pop = population_for_run(cfg, run)
    out = {"run": run, "nu_mean": float(np.mean(pop.nu)), "arms": {}}
    for p_idx, policy in enumerate(POLICIES):
        if policy not in cfg.policies:
            continue
        plan_rng = stream(cfg.master_seed, run, _PLAN + p_idx)
        plant_rng = stream(cfg.master_seed, run, _PLANT)  # shared across arms
        try:
            traj = run_closed_loop(cfg.x0, cfg.plant, pop, cfg.mpc, cfg.steps, policy,
                                   plan_rng, plant_rng)
        except PlanningError as exc:
            out["arms"][policy] = {"x_final": None, "error": str(exc), "records": None}
            continue
        out["arms"][policy] = {
            "x_final": traj.final,
            "error": None,
            "cost": float(sum(d.offer.wage for d in traj.decisions)),
            "tightenings": int(sum(d.iterations for d in traj.decisions)),
            "records": traj.records() if cfg.keep_trajectories else None,
        }
    return out


def histogram(values: list[float], lo: int, hi: int) -> list[dict]:
    """Unit-width bins ``[b, b+1)`` for ``b`` in ``lo..hi-1``."""
    counts = [0] * (hi - lo)
    for v in values:
        counts[min(int(math.floor(v)) - lo, hi - lo - 1)] += 1
    return [{"bin_left": float(lo + i), "bin_right": float(lo + i + 1), "count": c}
            for i, c in enumerate(counts)]


@dataclass
class ExperimentReport:
    config: dict
    policies: dict
    runs: list[dict]
    trajectories: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(arm["failed_runs"] for arm in self.policies.values())

    def violations(self, policy: str) -> int:
        return self.policies[policy]["violations"]

    def to_dict(self) -> dict:
        """Everything except wall-clock timing, which is not reproducible."""
        return {
            "config": self.config,
            "pairing": {"shared_population": True, "shared_worker_decisions": True},
            "policies": self.policies,
            "runs": self.runs,
        }

    def summary_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _aggregate(cfg: ExperimentConfig, results: list[dict]) -> ExperimentReport:
    results = sorted(results, key=lambda r: r["run"])
    x_ref = cfg.mpc.x_ref
    finals = {p: [r["arms"][p]["x_final"] for r in results] for p in cfg.policies}
    done = [v for vals in finals.values() for v in vals if v is not None]
    lo = int(math.floor(min(done))) if done else 0
    hi = int(math.floor(max(done))) + 1 if done else 1
    policies, trajectories = {}, {}
    for p in cfg.policies:
        ok = [v for v in finals[p] if v is not None]
        arms = [r["arms"][p] for r in results]
        violations = sum(v > x_ref + FEAS_TOL for v in ok)
        policies[p] = {
            "runs": cfg.runs,
            "completed": len(ok),
            "failed_runs": [r["run"] for r, a in zip(results, arms) if a["error"]],
            "errors": [a["error"] for a in arms if a["error"]],
            "violations": violations,
            "violation_rate": violations / cfg.runs,
            "x_final": finals[p],
            "histogram": histogram(ok, lo, hi),
            "mean_cost": float(np.mean([a["cost"] for a in arms if not a["error"]])) if ok else None,
            "mean_tightenings": (float(np.mean([a["tightenings"] for a in arms if not a["error"]]))
                                 if ok else None),
        }
        if cfg.keep_trajectories:
            trajectories[p] = [{"run": r["run"], "records": a["records"]}
                               for r, a in zip(results, arms) if a["records"] is not None]
    runs = [{"run": r["run"], "nu_mean": r["nu_mean"]} for r in results]
    return ExperimentReport(cfg.to_dict(include_execution=False), policies, runs, trajectories)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """All runs of ``cfg``; serial and pooled execution give identical reports."""
    start = time.perf_counter()
    jobs = [(cfg, r) for r in range(cfg.runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, cfg.runs // (4 * cfg.workers))))
    else:
        results = [_run_one(j) for j in jobs]
    report = _aggregate(cfg, results)
    wall = time.perf_counter() - start
    report.timing = {"wall_seconds": wall, "seconds_per_run": wall / cfg.runs,
                     "workers": cfg.workers}
    for p, arm in report.policies.items():
        logger.info("%s: %d/%d violations, %d failed runs", p, arm["violations"], cfg.runs,
                    len(arm["failed_runs"]))
    return report


def export(report: ExperimentReport, path: str | Path) -> list[Path]:
    """Write summary.json, histogram.csv, timing.json and (if any) trajectories.jsonl."""
    out = Path(path)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = out / "summary.json"
        summary.write_text(report.summary_json())
        written.append(summary)

        hist = out / "histogram.csv"
        lines = ["policy,bin_left,bin_right,count"]
        for p, arm in report.policies.items():
            lines += [f"{p},{b['bin_left']!r},{b['bin_right']!r},{b['count']}"
                      for b in arm["histogram"]]
        hist.write_text("\n".join(lines) + "\n")
        written.append(hist)

        if any(report.trajectories.values()):
            traj = out / "trajectories.jsonl"
            with open(traj, "w") as fh:
                for p, runs in report.trajectories.items():
                    for run in runs:
                        for rec in run["records"]:
                            fh.write(json.dumps({"policy": p, "run": run["run"], **rec},
                                                sort_keys=True) + "\n")
            written.append(traj)

        if report.timing:
            timing = out / "timing.json"
            timing.write_text(json.dumps(report.timing, indent=2, sort_keys=True) + "\n")
            written.append(timing)
    except OSError as exc:
        raise OSError(f"export to {out} failed: {exc}") from exc
    return written
