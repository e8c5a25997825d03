import json

import numpy as np
import pytest

from gigwms.harness import (ConfigError, ExperimentReport, config_from_dict, export, histogram,
                            load_config, population_for_run, run_experiment)

SMALL = {"runs": 4, "steps": 3}

# one worker, loose epsilon and no tightening budget: verification always fails
FAILING = {
    "runs": 2, "steps": 2,
    "population": {"nu_values": [-1.216]},
    "mpc": {"horizon": 1, "epsilon0": 0.5, "max_tighten_iters": 0},
}


def test_default_config_matches_table():
    cfg = load_config()
    assert len(cfg.population.draw(np.random.default_rng(0))) == 100
    assert cfg.x0 == 30 and cfg.plant.inflow == 5 and cfg.plant.growth == 1
    m = cfg.mpc
    assert (m.horizon, m.x_ref, m.epsilon0) == (3, 10, 0.01)
    assert (m.verifier.eta, m.verifier.delta, m.verifier.alpha) == (0.05, 1e-8, 2)
    assert (cfg.population.kappa, cfg.population.lam, cfg.population.nu_mean) == \
        (-7.253, 0.006385, -1.216)
    assert (cfg.runs, cfg.steps) == (200, 10)


def test_config_round_trip():
    cfg = config_from_dict({"runs": 7, "plant": {"inflow": [1, 2, 3]}, "mpc": {"gamma": 0.3}})
    assert config_from_dict(cfg.to_dict()) == cfg
    assert cfg.plant.inflow == (1.0, 2.0, 3.0)


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"mpc": {"horizon": 3, "typo": 1}},
    {"runs": 0},
    {"steps": 0},
    {"policies": ["greedy"]},
    {"mpc": {"gamma": 2.0}},
    {"plant": {"growth": 0.5}},
    {"population": {"n": "many"}},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.json")


def test_histogram_bins():
    bins = histogram([10.0, 10.5, 12.99, 13.0], 10, 14)
    assert [b["count"] for b in bins] == [2, 0, 1, 1]
    assert bins[0]["bin_left"] == 10.0 and bins[-1]["bin_right"] == 14.0


def test_population_per_run():
    cfg = config_from_dict(SMALL)
    assert population_for_run(cfg, 0) != population_for_run(cfg, 1)
    assert population_for_run(cfg, 1) == population_for_run(cfg, 1)
    fixed = cfg.replace(fixed_population=True)
    assert population_for_run(fixed, 0) == population_for_run(fixed, 3)


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(config_from_dict(SMALL))


def test_report_contents(small_report):
    assert not small_report.failed
    for policy, arm in small_report.policies.items():
        assert arm["runs"] == 4 and arm["completed"] == 4
        assert sum(b["count"] for b in arm["histogram"]) == 4
        assert 0 <= arm["violations"] <= 4
        assert arm["violations"] == sum(x > 10 + 1e-6 for x in arm["x_final"])
    assert small_report.policies["verified"]["histogram"][0]["bin_left"] == \
        small_report.policies["baseline"]["histogram"][0]["bin_left"]
    assert "workers" not in small_report.config
    assert small_report.timing["wall_seconds"] > 0


def test_report_reproducible(small_report):
    again = run_experiment(config_from_dict(SMALL))
    assert again.summary_json() == small_report.summary_json()


def test_serial_equals_parallel(small_report):
    par = run_experiment(config_from_dict({**SMALL, "workers": 2}))
    assert par.summary_json() == small_report.summary_json()


def test_runs_independent_of_batch_size(small_report):
    two = run_experiment(config_from_dict({**SMALL, "runs": 2}))
    for policy in two.policies:
        assert two.policies[policy]["x_final"] == small_report.policies[policy]["x_final"][:2]


def test_different_seed_differs(small_report):
    other = run_experiment(config_from_dict({**SMALL, "master_seed": 1}))
    assert other.summary_json() != small_report.summary_json()


def test_failures_are_recorded():
    report = run_experiment(config_from_dict(FAILING))
    arm = report.policies["verified"]
    assert report.failed
    assert arm["failed_runs"] == [0, 1] and arm["completed"] == 0
    assert arm["x_final"] == [None, None]
    assert report.policies["baseline"]["completed"] == 2


def test_sure_acceptance_run():
    cfg = config_from_dict({"runs": 1, "steps": 4, "keep_trajectories": True,
                            "population": {"nu_values": [60.0] * 5}})
    report = run_experiment(cfg)
    for policy, runs in report.trajectories.items():
        records = runs[0]["records"]
        assert [r["beta"] for r in records] == [1, 1, 1, 1]
        x = 30.0
        for r in records:
            assert r["x"] == pytest.approx(x)
            x = x - r["u_hat"] + 5
        assert report.policies[policy]["x_final"][0] == pytest.approx(x)


def test_export_files(tmp_path, small_report):
    paths = export(small_report, tmp_path / "out")
    names = sorted(p.name for p in paths)
    assert names == ["histogram.csv", "summary.json", "timing.json"]
    hist = (tmp_path / "out" / "histogram.csv").read_text().splitlines()
    assert hist[0] == "policy,bin_left,bin_right,count"
    for policy in ("verified", "baseline"):
        assert sum(int(l.split(",")[3]) for l in hist[1:] if l.startswith(policy)) == 4
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["pairing"]["shared_population"] is True
    assert "wall_seconds" not in json.dumps(summary)


def test_export_is_byte_stable(tmp_path, small_report):
    export(small_report, tmp_path / "a")
    export(small_report, tmp_path / "b")
    for name in ("summary.json", "histogram.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_export_trajectories(tmp_path):
    report = run_experiment(config_from_dict({**SMALL, "runs": 2, "keep_trajectories": True}))
    export(report, tmp_path)
    lines = (tmp_path / "trajectories.jsonl").read_text().splitlines()
    assert len(lines) == 2 * 2 * 3  # policies x runs x steps
    first = json.loads(lines[0])
    assert {"policy", "run", "k", "x", "u_hat", "p", "beta"} <= set(first)


def test_export_error_has_path(tmp_path, small_report):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        export(small_report, blocker)


def test_empty_report_export(tmp_path):
    report = ExperimentReport({}, {}, [])
    assert [p.name for p in export(report, tmp_path)] == ["summary.json", "histogram.csv"]
