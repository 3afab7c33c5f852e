import math
from fractions import Fraction as F

import numpy as np
import pytest

from oracles import discounted_q_star
from realtime_rl import harness
from realtime_rl.envcore import grid_world, inaction_worst
from realtime_rl.latency import Constant, parse_latency
from realtime_rl.learncore import n_star_learn
from realtime_rl.regret import optimal_average_reward
from realtime_rl.runtime import RunSetup, Simulation, horizon_for_seconds, simulate
from realtime_rl.stagger import InteractionMode, n_star_predicted
from realtime_rl.agents import OracleAgent


def cfg(env="inaction_worst", env_params=None, **kw):
    kw.setdefault("horizon_ticks", 3000)
    for key in ("tau_m", "tau_theta", "tau_l", "tau_theta_fast"):
        if isinstance(kw.get(key), str):
            kw[key] = parse_latency(kw[key])
    return harness.ExperimentConfig(env, env_params or {}, **kw)


def run(c):
    rep = harness.run(c, write_logs=False)
    rep.check_conservation()
    return rep


def test_sequential_consumes_every_third_tick():
    rep = run(cfg(mode="sequential", tau_theta="0.025"))
    assert rep.steady["beta_fraction"] == pytest.approx(2 / 3, abs=1e-3)
    # rate floor: regret per tick equals the idle share
    assert rep.steady["components"]["inaction"] / rep.steady["ticks"] == pytest.approx(2 / 3, abs=1e-3)


def test_learning_order_in_sequential_modes():
    # learn-first registers at +0.015 and acts every 2nd tick; act-first lands on the
    # tick boundary and overlaps learning with the wait, acting on 2 of every 3 ticks
    a = run(cfg(mode="sequential", tau_theta="0.01", tau_l="0.005", policy="q"))
    b = run(cfg(mode="flipped_sequential", tau_theta="0.01", tau_l="0.005", policy="q"))
    assert a.steady["beta_fraction"] == pytest.approx(1 / 2, abs=1e-3)
    assert b.steady["beta_fraction"] == pytest.approx(1 / 3, abs=1e-3)


def test_one_step_lag_acts_every_tick():
    rep = run(cfg(mode="one_step_lag", tau_theta="0.005"))
    assert rep.steady["beta_fraction"] == 0
    hist = rep.result.ledger.staleness_hist
    assert set(hist) == {1}


@pytest.mark.parametrize("mode", ["staggered_max", "staggered_expected"])
def test_enough_staggered_processes_remove_inaction(mode):
    n = math.ceil(F(3, 100) / F(1, 100))
    rep = run(cfg(mode=mode, n_inference=n, tau_theta="0.03"))
    assert rep.steady["beta_fraction"] == 0


def test_equal_spacing_after_warm_up():
    rep = run(cfg(mode="staggered_max", n_inference=4, tau_theta="0.04", horizon_ticks=2000))
    gaps = rep.result.steady_gaps()
    assert gaps and set(gaps) == {F(1, 100)}


def test_zero_spread_overwrites_all_but_one():
    rep = run(cfg(mode="staggered_max", n_inference=4, tau_theta="0.04", epsilon_spread=0))
    assert rep.steady["overwritten_fraction"] == pytest.approx(0.75)


@pytest.mark.parametrize("mode,kind", [("staggered_max", "max"), ("staggered_expected", "expected")])
def test_measured_n_star_equals_prediction(mode, kind):
    c = cfg(mode=mode, tau_theta="0.05", horizon_ticks=2000)
    predicted = n_star_predicted(kind, Constant(0.05), F(1, 100))
    assert harness.measure_n_star(c, 0.01) == predicted == 5


@pytest.mark.parametrize("mode", ["staggered_max", "staggered_expected"])
def test_beta_fraction_non_increasing_in_process_count(mode):
    reports, _ = harness.sweep(cfg(mode=mode, tau_theta="0.05", horizon_ticks=2000), "n_inference", [1, 2, 3, 4, 5, 6])
    fr = [r.steady["beta_fraction"] for r in reports]
    assert all(a >= b for a, b in zip(fr, fr[1:]))


def test_oracle_plug_in_on_deterministic_env():
    rep = run(cfg("delay_cycle", {"n": 5, "p_stay": 1.0}, policy="modal", mode="staggered_max", n_inference=3, tau_theta="0.03"))
    st = rep.steady
    assert st["beta_fraction"] == 0
    assert st["components"] == {"learn": 0.0, "inaction": 0.0, "delay": 0.0}
    assert rep.identity_residual < 1e-9


def test_chunked_mode_fills_ticks_between_inferences():
    rep = run(cfg("grid_world", {"width": 3, "height": 3}, policy="oracle", mode="chunked", chunk_k=4, tau_theta="0.03", horizon_ticks=2000))
    assert rep.steady["beta_fraction"] < 0.5
    assert rep.mailbox["registered"] >= rep.mailbox["consumed"]


def test_random_policy_runs():
    rep = run(cfg("random_mdp", {"n_states": 5, "n_actions": 3, "mdp_seed": 1}, policy="random", mode="staggered_expected", n_inference=2, tau_theta="uniform:0.005,0.02"))
    assert rep.ledger["ticks"] == 3000


def test_runs_are_deterministic():
    c = cfg("delay_cycle", {"n": 6, "p_stay": 0.8}, policy="q", mode="staggered_expected", n_inference=3, tau_theta="mixture:0.5@0,0.5@0.04", tau_l="0.02", n_learn=2)
    assert run(c).to_dict() == run(c).to_dict()
    other = run(c.replace(seed=1)).to_dict()
    assert other["total_reward"] != run(c).to_dict()["total_reward"]


def _learning_cfg(n_learn, tau_l):
    return cfg("grid_world", {"width": 3, "height": 3}, policy="q", mode="staggered_max", n_inference=1, tau_theta="0.01", tau_l=tau_l, n_learn=n_learn, batch_size=4, horizon_ticks=2000)


def test_round_robin_staleness_in_runtime():
    rep = run(_learning_cfg(3, "0.03"))
    stale = rep.result.learner.staleness
    assert max(stale) <= 2 and set(stale[10:]) == {2}
    applied = rep.result.learner.applied
    assert applied == list(range(1, len(applied) + 1))


def test_enough_learners_keep_up():
    n = n_star_learn(F(5, 100), F(1, 100))
    assert run(_learning_cfg(n, "0.05")).steady["learn_throughput"] >= 0.99
    assert run(_learning_cfg(n - 1, "0.05")).steady["learn_throughput"] < 0.99


def test_q_learning_recovers_optimal_grid_policy():
    c = cfg("grid_world", {"width": 3, "height": 3}, policy="q", mode="sequential", tau_theta="0", smdp_key="ground", optimistic=False, batch_size=4, epsilon_steps=50_000, horizon_ticks=100_000)
    setup = harness.build_setup(c)
    sim = Simulation(setup)
    sim.run_virtual()
    spec = setup.spec
    q_star = discounted_q_star(spec.p, spec.r, spec.agent_actions, c.gamma)
    learned = setup.agent.q.q
    for s in range(spec.n_states):
        best = set(np.flatnonzero(q_star[s] >= q_star[s].max() - 1e-9))
        assert int(np.argmax(learned[s])) in best, s


def test_wall_clock_smoke():
    c = cfg(mode="staggered_max", n_inference=3, tau_theta="0.02", tau_m="0.02", clock="wallclock", horizon_seconds=1.0)
    rep = run(c)
    assert rep.ledger["ticks"] == 50
    assert rep.result.clock_mode == "wallclock" and rep.result.jitter


def test_run_setup_validation():
    spec = inaction_worst()
    agent = OracleAgent(spec)
    common = dict(spec=spec, agent=agent, tau_m=Constant(0.01), tau_theta=Constant(0.01))
    with pytest.raises(ValueError):
        RunSetup(mode=InteractionMode("sequential"), horizon_ticks=10, n_inference=2, **common)
    with pytest.raises(ValueError):
        RunSetup(mode=InteractionMode("staggered_max"), horizon_ticks=0, **common)
    with pytest.raises(ValueError):
        simulate(RunSetup(mode=InteractionMode("staggered_max"), horizon_ticks=5, **common), clock="sundial")


def test_simulate_checkpoints_and_horizon():
    spec = grid_world(2, 2)
    setup = RunSetup(spec, InteractionMode("staggered_max"), OracleAgent(spec), Constant(0.01), Constant(0.02), 100, n_inference=2, checkpoints=(10, 50), solution=optimal_average_reward(spec))
    res = simulate(setup)
    assert [c[0] for c in res.checkpoints] == [10, 50]
    assert res.ledger.ticks == 100
    assert horizon_for_seconds(1.0, Constant(0.03)) == 34
