"""Command-line entry point: ``gigwms <command> [options]``.

Exit codes: 0 on success, 1 for bad input or configuration, 2 when no
certified plan can be found.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import calibration, harness
from .controller import POLICIES, PlanningError, decide, run_closed_loop
from .lp_solver import InfeasibleProblemError, OfferPlan
from .verifier import exact_violation_probability, verify

EXIT_OK, EXIT_CONFIG, EXIT_PLANNING = 0, 1, 2


def _policies(choice: str) -> tuple[str, ...]:
    return POLICIES if choice == "both" else (choice,)


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(master_seed=args.seed)
    return cfg


def _emit(obj, out: Path | None, name: str) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
        print(f"wrote {out / name}")


def cmd_fit(args) -> int:
    points = calibration.read_survey(args.survey)
    model = calibration.fit(points, args.respondents)
    result = {"logit_ls": model.to_dict()}
    if args.refine:
        result["gauss_newton"] = calibration.refine_gauss_newton(points, model).to_dict()
    if not model.valid:
        logging.warning("fitted signs are implausible (kappa=%g, lambda=%g)", model.kappa, model.lam)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        calibration.save_model(model, args.out / "model.json")
        print(f"wrote {args.out / 'model.json'}")
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_surface(args) -> int:
    model = calibration.load_model(args.model) if args.model else calibration.SURVEY_MODEL
    hours = np.linspace(args.hours[0], args.hours[1], args.points)
    wages = np.linspace(args.wages[0], args.wages[1], args.points)
    rows = calibration.surface_grid(model, hours, wages)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    calibration.write_surface_csv(rows, out / "surface.csv")
    print(f"wrote {out / 'surface.csv'} ({len(rows)} points)")
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _load(args)
    pop = harness.population_for_run(cfg, 0)
    x = cfg.x0 if args.x is None else args.x
    result = {}
    for policy in _policies(args.policy):
        d = decide(x, cfg.plant, pop, cfg.mpc, policy, np.random.default_rng(cfg.master_seed), args.k)
        result[policy] = {
            "worker_index": d.worker_index,
            "plan": d.plan.to_dict(),
            "offer": {"hours": d.offer.hours, "wage": d.offer.wage},
            "epsilon_final": d.epsilon_final,
            "tightenings": d.iterations,
            "verification": d.outcome.to_dict() if d.outcome else None,
        }
    _emit(result, args.out, "plan.json")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    pop = harness.population_for_run(cfg, 0)
    steps = args.steps or cfg.steps
    summary = {}
    for p_idx, policy in enumerate(POLICIES):
        if policy not in _policies(args.policy):
            continue
        traj = run_closed_loop(cfg.x0, cfg.plant, pop, cfg.mpc, steps, policy,
                               harness.stream(cfg.master_seed, 0, 2 + p_idx),
                               harness.stream(cfg.master_seed, 0, 1))
        summary[policy] = {"x_final": traj.final,
                           "violated": traj.final > cfg.mpc.x_ref + 1e-6}
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / f"trajectory_{policy}.jsonl").write_text(traj.to_jsonl())
        else:
            sys.stdout.write(traj.to_jsonl())
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load(args).replace(policies=_policies(args.policy))
    changes = {}
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.fixed_population:
        changes["fixed_population"] = True
    if args.trajectories:
        changes["keep_trajectories"] = True
    cfg = cfg.replace(**changes)
    report = harness.run_experiment(cfg)
    out = args.out or Path("results")
    for path in harness.export(report, out):
        print(f"wrote {path}")
    for policy, arm in report.policies.items():
        print(f"{policy}: {arm['violations']}/{arm['runs']} runs ended above x_ref "
              f"({len(arm['failed_runs'])} failed)")
    return EXIT_PLANNING if report.failed else EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args)
    pop = harness.population_for_run(cfg, 0)
    data = json.loads(Path(args.plan).read_text())
    for policy in POLICIES:  # accept the output of 'plan' as well as a bare plan
        if policy in data:
            data = data[policy]
            break
    plan = OfferPlan.from_dict(data.get("plan", data))
    x = cfg.x0 if args.x is None else args.x
    out = verify(plan, args.l, x, cfg.plant, pop, cfg.mpc.x_ref, cfg.mpc.verifier,
                 np.random.default_rng(cfg.master_seed), cfg.mpc.sampler)
    result = out.to_dict()
    if len(plan) <= 12:
        result["exact_violation_probability"] = exact_violation_probability(
            plan, x, cfg.plant, pop, cfg.mpc.x_ref)
    _emit(result, args.out, "verification.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gigwms", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policy=True):
        p.add_argument("--config", type=Path, help="experiment JSON (defaults built in)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", type=Path, help="output directory")
        if policy:
            p.add_argument("--policy", choices=POLICIES + ("both",), default="both")

    p = sub.add_parser("fit", help="fit the acceptance model to a survey CSV")
    p.add_argument("survey", type=Path)
    p.add_argument("--respondents", type=int, default=calibration.DEFAULT_RESPONDENTS)
    p.add_argument("--refine", action="store_true", help="also report a Gauss-Newton fit")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("surface", help="acceptance probability on an hours x wage grid")
    p.add_argument("--model", type=Path, help="model JSON from 'fit' (default: survey model)")
    p.add_argument("--hours", type=float, nargs=2, default=(0.0, 3.0))
    p.add_argument("--wages", type=float, nargs=2, default=(0.0, 3000.0))
    p.add_argument("--points", type=int, default=31, help="grid points per axis")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("plan", help="one offer decision from the current workload")
    common(p)
    p.add_argument("--x", type=float, help="current workload (default: config x0)")
    p.add_argument("--k", type=int, default=0, help="time index")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="one closed-loop run per policy")
    common(p)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="Monte-Carlo comparison of the policies")
    common(p)
    p.add_argument("--runs", type=int)
    p.add_argument("--workers", type=int, help="process pool size")
    p.add_argument("--fixed-population", action="store_true")
    p.add_argument("--trajectories", action="store_true", help="write trajectories.jsonl")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify", help="certify a saved plan by simulation")
    common(p, policy=False)
    p.add_argument("plan", type=Path, help="plan JSON (as written by 'plan')")
    p.add_argument("--l", type=int, default=1, help="verification index (>= 1)")
    p.add_argument("--x", type=float)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse uses 2, which here means planning failure
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PlanningError, InfeasibleProblemError) as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_PLANNING
    except (harness.ConfigError, ValueError, KeyError,
            OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
