import math

import numpy as np
import pytest

from gigwms.controller import (MpcConfig, PlanningError, plan_baseline, plan_verified,
                               plan_verified_batch, run_closed_loop, select_offer)
from gigwms.lp_solver import terminal_under_full_acceptance
from gigwms.plant import PlantModel
from gigwms.verifier import exact_violation_probability
from gigwms.worker_model import (SURVEY_KAPPA, SURVEY_LAMBDA, SURVEY_NU, WorkerPopulation,
                                 max_hours_bound, sample_population)

MODEL = PlantModel(1.0, 5.0)
CFG = MpcConfig()


@pytest.fixture(scope="module")
def table_pop():
    return sample_population(SURVEY_KAPPA, SURVEY_LAMBDA, SURVEY_NU, 100,
                             np.random.default_rng(20))


def test_config_validation():
    for bad in (dict(horizon=0), dict(epsilon0=0), dict(gamma=1.0), dict(x_ref=math.nan),
                dict(tie_break="nope"), dict(lp_backend="nope"), dict(sampler="nope"),
                dict(max_tighten_iters=-1)):
        with pytest.raises(ValueError):
            MpcConfig(**bad)
    assert CFG.eta == 0.05


def test_trivial_target_accepted_immediately(table_pop):
    cfg = MpcConfig(x_ref=100)
    d = plan_verified(30, MODEL, table_pop, cfg, 0, np.random.default_rng(0))
    assert d.plan.objective == 0
    assert d.iterations == 0
    assert d.epsilon_final == cfg.epsilon0
    assert d.outcome.accepted and d.outcome.failures == 0


def test_table_instance_plan(table_pop):
    d = plan_verified(30, MODEL, table_pop, CFG, 0, np.random.default_rng(1))
    assert d.outcome.accepted
    assert terminal_under_full_acceptance(d.plan, 30, MODEL) == pytest.approx(10.0, abs=1e-6)
    assert exact_violation_probability(d.plan, 30, MODEL, table_pop, 10) <= CFG.eta
    assert d.epsilon_final == pytest.approx(CFG.gamma ** d.iterations * CFG.epsilon0)
    assert d.offer.hours == d.plan.hours[0] and d.offer.wage == d.plan.wages[0]


def test_tightening_raises_cost(table_pop):
    # start loose so several tightenings are needed
    cfg = MpcConfig(epsilon0=0.5)
    d = plan_verified(30, MODEL, table_pop, cfg, 3, np.random.default_rng(2))
    assert d.iterations >= 1
    costs = [a.objective for a in d.history]
    eps = [a.epsilon for a in d.history]
    assert all(b >= a - 1e-9 for a, b in zip(costs, costs[1:]))
    assert eps == pytest.approx([0.5 * 0.5 ** i for i in range(len(eps))])
    assert [a.outcome.accepted for a in d.history] == [False] * d.iterations + [True]
    assert [a.outcome.iteration for a in d.history] == list(range(1, d.iterations + 2))


def test_batch_matches_single(table_pop):
    idx = [0, 17, 42]
    seeds = [5, 6, 7]
    batch = plan_verified_batch(30, MODEL, table_pop, CFG, idx,
                                [np.random.default_rng(s) for s in seeds])
    for i, s, b in zip(idx, seeds, batch):
        single = plan_verified(30, MODEL, table_pop, CFG, i, np.random.default_rng(s))
        assert single == b


def test_simplex_backend_gives_same_decision(table_pop):
    a = select_offer(30, MODEL, table_pop, CFG, np.random.default_rng(3))
    b = select_offer(30, MODEL, table_pop, MpcConfig(lp_backend="simplex"),
                     np.random.default_rng(3))
    assert a.worker_index == b.worker_index
    assert np.allclose(a.plan.wages, b.plan.wages, rtol=1e-9)


def test_select_offer_identical_workers_picks_first():
    pop = WorkerPopulation(SURVEY_KAPPA, SURVEY_LAMBDA, np.full(5, SURVEY_NU))
    d = select_offer(30, MODEL, pop, MpcConfig(x_ref=100), np.random.default_rng(0))
    assert d.worker_index == 0


def test_select_offer_prefers_eager_worker():
    nu = np.full(10, SURVEY_NU)
    nu[6] += 0.5  # higher offset raises that worker's hours allowance at every wage
    pop = WorkerPopulation(SURVEY_KAPPA, SURVEY_LAMBDA, nu)
    assert max_hours_bound(1000, pop[6], 0.01, 10) > max_hours_bound(1000, pop[0], 0.01, 10)
    base = plan_baseline(30, MODEL, pop, CFG)
    assert base.worker_index == 6


def test_select_offer_single_worker_matches_plan_verified():
    pop = WorkerPopulation(SURVEY_KAPPA, SURVEY_LAMBDA, [SURVEY_NU])
    a = select_offer(30, MODEL, pop, CFG, np.random.default_rng(9))
    (child,) = np.random.default_rng(9).spawn(1)
    b = plan_verified(30, MODEL, pop, CFG, 0, child)
    assert a == b


def test_baseline_matches_untightened_verified(table_pop):
    d = plan_verified(30, MODEL, table_pop, MpcConfig(x_ref=100), 0, np.random.default_rng(0))
    assert d.iterations == 0
    base = plan_baseline(30, MODEL, table_pop, MpcConfig(x_ref=100))
    assert base.offer == d.offer and base.outcome is None


def test_baseline_no_more_expensive(table_pop):
    for seed in range(3):
        v = select_offer(30, MODEL, table_pop, CFG, np.random.default_rng(seed))
        b = plan_baseline(30, MODEL, table_pop, CFG)
        assert b.plan.objective <= v.plan.objective + 1e-9


def test_baseline_trivial_target(table_pop):
    assert plan_baseline(30, MODEL, table_pop, MpcConfig(x_ref=1e3)).plan.objective == 0


def test_exhausted_tightening_raises():
    # one worker, loose epsilon: the first plan fails half its trials
    pop = WorkerPopulation(SURVEY_KAPPA, SURVEY_LAMBDA, [SURVEY_NU])
    cfg = MpcConfig(horizon=1, epsilon0=0.5, max_tighten_iters=0)
    with pytest.raises(PlanningError) as exc:
        plan_verified(30, MODEL, pop, cfg, 0, np.random.default_rng(0))
    assert exc.value.outcome is not None and not exc.value.outcome.accepted
    assert exc.value.worker_index == 0
    with pytest.raises(PlanningError):
        select_offer(30, MODEL, pop, cfg, np.random.default_rng(0))


def test_worker_index_checked(table_pop):
    with pytest.raises(IndexError):
        plan_verified(30, MODEL, table_pop, CFG, 100, np.random.default_rng(0))


def test_forced_rejection_gives_uncontrolled_growth(table_pop):
    model = PlantModel(1.05, 5.0)
    traj = run_closed_loop(30, model, table_pop, CFG, 4, "baseline", np.random.default_rng(0),
                           force_beta=0)
    expected = 1.05 ** 4 * 30 + 5 * sum(1.05 ** j for j in range(4))
    assert traj.final == pytest.approx(expected)
    assert traj.beta == [0, 0, 0, 0]


def test_sure_acceptance_meets_target():
    # very eager workers accept every planned offer
    pop = WorkerPopulation(SURVEY_KAPPA, SURVEY_LAMBDA, np.full(20, 40.0))
    for policy in ("verified", "baseline"):
        traj = run_closed_loop(30, MODEL, pop, CFG, 10, policy, np.random.default_rng(4))
        assert traj.beta == [1] * 10
        assert traj.final <= 10 + 1e-6


def test_closed_loop_records(table_pop):
    traj = run_closed_loop(30, MODEL, table_pop, CFG, 5, "verified", np.random.default_rng(11),
                           np.random.default_rng(12))
    records = traj.records()
    assert len(records) == 5 and len(traj.x) == 6
    for k, (rec, d) in enumerate(zip(records, traj.decisions)):
        assert set(rec) == {"k", "x", "worker_index", "u_hat", "p", "beta", "epsilon_final",
                            "l_star", "M_l", "failures"}
        assert rec["k"] == k and rec["x"] == traj.x[k]
        assert rec["u_hat"] == d.plan.hours[0] and rec["p"] == d.plan.wages[0]
        assert d.epsilon_final == pytest.approx(CFG.gamma ** d.iterations * CFG.epsilon0)
        worker = table_pop[d.worker_index]
        assert d.offer.hours <= max_hours_bound(d.offer.wage, worker, d.epsilon_final,
                                                len(table_pop)) + 1e-9
        assert traj.x[k + 1] == pytest.approx(traj.x[k] - rec["beta"] * rec["u_hat"] + 5)
    assert traj.to_jsonl().count("\n") == 5


def test_closed_loop_deterministic(table_pop):
    a = run_closed_loop(30, MODEL, table_pop, CFG, 4, "verified", np.random.default_rng(3),
                        np.random.default_rng(4))
    b = run_closed_loop(30, MODEL, table_pop, CFG, 4, "verified", np.random.default_rng(3),
                        np.random.default_rng(4))
    assert a.to_jsonl() == b.to_jsonl()


def test_stop_at_target():
    pop = WorkerPopulation(SURVEY_KAPPA, SURVEY_LAMBDA, np.full(20, 40.0))
    traj = run_closed_loop(30, MODEL, pop, CFG, 10, "baseline", np.random.default_rng(0),
                           stop_at_target=True)
    assert len(traj.decisions) < 10
    assert traj.final <= 10 + 1e-6


def test_unknown_policy(table_pop):
    with pytest.raises(ValueError):
        run_closed_loop(30, MODEL, table_pop, CFG, 1, "greedy", np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_closed_loop(30, MODEL, table_pop, CFG, 0, "baseline", np.random.default_rng(0))
