import itertools
import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_gain, cesaro_limit, max_mean_cycle_gain
from realtime_rl.envcore import Actor, AsyncEnv, ActionMailbox, TransitionRecord, delay_cycle, grid_world, inaction_worst, random_mdp
from realtime_rl.latency import Constant, Exponential, Mixture
from realtime_rl.regret import (
    OracleError,
    RegretLedger,
    delayed_oracle,
    delayed_oracle_rate,
    eq3_inaction_bound,
    eq4_delay_bound,
    expected_delay_factor,
    modal_state_policy,
    optimal_average_reward,
    p_minimax,
    record,
    simulate_delayed_policy,
)

SMALL_FIXTURES = [
    inaction_worst(),
    delay_cycle(4, 0.7),
    delay_cycle(6, 0.4),
    grid_world(2, 3),
    grid_world(3, 2, goal=(1, 1)),
    random_mdp(5, 3, seed=1),
    random_mdp(6, 2, seed=2),
    random_mdp(4, 2, seed=3, r_max=5.0, default_actions=2),
]


def test_inaction_optimal_rate_is_one():
    assert optimal_average_reward(inaction_worst()).rho_star == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("n,p", [(3, 0.5), (10, 0.9), (32, 0.95)])
def test_delay_cycle_optimal_rate_is_one(n, p):
    sol = optimal_average_reward(delay_cycle(n, p))
    assert sol.rho_star == pytest.approx(1.0, abs=1e-9)
    assert (sol.pi_star == np.arange(n)).all()


@pytest.mark.parametrize("spec", SMALL_FIXTURES, ids=lambda s: s.name)
def test_value_iteration_matches_policy_enumeration(spec):
    brute = brute_force_gain(spec.p, spec.r, spec.agent_actions, spec.initial_state)
    assert optimal_average_reward(spec).rho_star == pytest.approx(brute, abs=1e-7)


def test_grid_4x4_matches_best_cycle():
    spec = grid_world(4, 4)
    best = max_mean_cycle_gain(spec.p, spec.r, spec.agent_actions, spec.initial_state)
    assert best == pytest.approx(1 / 7)
    assert optimal_average_reward(spec).rho_star == pytest.approx(best, abs=1e-9)


def test_optimal_policy_achieves_optimal_gain():
    spec = random_mdp(6, 3, seed=9)
    sol = optimal_average_reward(spec)
    idx = np.arange(spec.n_states)
    limit = cesaro_limit(spec.p[idx, sol.pi_star, :])
    gain = limit @ spec.r[idx, sol.pi_star]
    assert gain[spec.initial_state] == pytest.approx(sol.rho_star, abs=1e-8)


def test_rvi_iteration_cap():
    with pytest.raises(OracleError):
        optimal_average_reward(random_mdp(6, 3, seed=0), max_iter=2)


def test_p_minimax_examples():
    assert p_minimax(grid_world(3, 3)) == 1.0
    assert p_minimax(delay_cycle(10, 0.9)) == pytest.approx(0.9)


def test_p_minimax_uniform_rows():
    n = 5
    p = np.full((n, 2, n), 1 / n)
    from realtime_rl.envcore import AsyncMdpSpec

    spec = AsyncMdpSpec(n, 1, 1, p, np.zeros((n, 2)), 1.0, np.ones((n, 1)))
    assert p_minimax(spec) == pytest.approx(1 / n)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 12), st.integers(1, 100))
def test_p_minimax_of_delay_cycle(n, pct):
    p = max(pct / 100, 1 / n)
    assert p_minimax(delay_cycle(n, p)) == pytest.approx(p, abs=1e-12)


def _augmented_brute_force(spec, k):
    """Best gain over policies on (state, queued actions), built independently."""
    A = spec.agent_actions
    queues = list(itertools.product(range(A), repeat=k))
    aug = [(s, q) for s in range(spec.n_states) for q in queues]
    index = {x: i for i, x in enumerate(aug)}
    n = len(aug)
    P = np.zeros((n, A, n))
    R = np.zeros((n, A))
    for (s, q), i in index.items():
        for b in range(A):
            R[i, b] = spec.r[s, q[0]]
            for s2 in range(spec.n_states):
                P[i, b, index[(s2, q[1:] + (b,))]] += spec.p[s, q[0], s2]
    # the initial queue contents are free, so take the best of them
    return max(brute_force_gain(P, R, A, index[(spec.initial_state, q)]) for q in queues)


@pytest.mark.parametrize("spec,k", [(delay_cycle(3, 0.8), 1), (delay_cycle(2, 0.6), 2), (random_mdp(3, 2, seed=4), 2)])
def test_exact_delayed_oracle_matches_enumeration(spec, k):
    res = delayed_oracle(spec, k)
    assert res.method == "exact"
    assert res.rate == pytest.approx(_augmented_brute_force(spec, k), abs=1e-7)


def test_delayed_oracle_basics():
    spec = delay_cycle(5, 0.9)
    assert delayed_oracle_rate(spec, 0) == pytest.approx(1.0)
    grid = grid_world(4, 4)
    assert delayed_oracle_rate(grid, 7) == pytest.approx(optimal_average_reward(grid).rho_star)
    rates = [delayed_oracle_rate(spec, k) for k in range(4)]
    assert all(a >= b - 1e-9 for a, b in zip(rates, rates[1:]))
    with pytest.raises(ValueError):
        delayed_oracle(spec, -1)


def test_delayed_oracle_cap_without_fallback():
    with pytest.raises(OracleError):
        delayed_oracle(delay_cycle(32, 0.9), 4, allow_mc=False)


def test_modal_policy_rate_closed_form():
    spec = delay_cycle(32, 0.9)
    res = delayed_oracle(spec, 4, mc_steps=200_000)
    assert res.method == "monte_carlo"
    assert res.rate == pytest.approx(0.9**4, abs=3 * res.stderr + 0.002)


def test_modal_policy_regret_tightness():
    spec = delay_cycle(32, 0.9)
    policy = modal_state_policy(spec, 4)
    mean, _ = simulate_delayed_policy(spec, policy, 4, 200_000, np.random.default_rng(1))
    assert abs((1 - mean) - (1 - 0.9**4)) < 0.02 * (1 - 0.9**4)


def test_inaction_bound_examples():
    assert eq3_inaction_bound(100, F(3, 100), F(1, 100)) == pytest.approx(6666.6667, rel=1e-6)
    assert eq3_inaction_bound(100, 0.01, 0.01) == 0
    assert eq3_inaction_bound(200, 0.03, 0.01) == pytest.approx(2 * eq3_inaction_bound(100, 0.03, 0.01))
    with pytest.raises(ValueError):
        eq3_inaction_bound(100, 0.005, 0.01)


def test_delay_bound_examples():
    assert eq4_delay_bound(100, 0.01, Constant(0.04), 0.01, 0.9) == pytest.approx(3439.0)
    assert eq4_delay_bound(100, 0.01, Exponential(0.1), 0.01, 1.0) == 0.0
    bimodal = Mixture([(0.5, 0.01), (0.5, 0.02)])
    assert expected_delay_factor(bimodal, 0.01, 0.9) == pytest.approx(0.145)
    with pytest.raises(ValueError):
        expected_delay_factor(bimodal, 0.01, 0.0)


def test_delay_bound_monte_carlo_for_continuous_latency():
    got = expected_delay_factor(Exponential(0.01), 0.01, 0.9, n_mc=50_000)
    # ceil(X/m) for exponential X with mean m is geometric with q = exp(-1)
    q = math.exp(-1)
    exact = 1 - sum((1 - q) * q ** (j - 1) * 0.9**j for j in range(1, 200))
    assert got == pytest.approx(exact, abs=0.005)


def test_all_default_ledger_on_inaction():
    spec = inaction_worst()
    env, box, rng = AsyncEnv(spec), ActionMailbox(), np.random.default_rng(0)
    ledger = RegretLedger()
    for t in range(1000):
        record(ledger, env.tick(box, rng, F(t, 100)), 1.0)
    assert ledger.components["inaction"] == pytest.approx(1000.0)
    assert ledger.beta_fraction == 1.0 and ledger.agent_steps == 0
    assert ledger.identity_residual(1.0) == 0.0


def test_agent_step_split():
    ledger = RegretLedger()
    rec = TransitionRecord(3, F(3, 100), 0, 1, 1, 0.25, Actor.AGENT, decision_state=0, decision_step=1)
    ledger.record(rec, 1.0, 0.75)
    assert ledger.components == {"learn": 0.5, "inaction": 0.0, "delay": 0.25}
    assert ledger.staleness_hist == {2: 1}


records = st.builds(
    lambda actor, r, rk: (actor, r, rk),
    st.sampled_from([Actor.AGENT, Actor.DEFAULT]),
    st.floats(-5, 5, allow_nan=False),
    st.floats(-5, 5, allow_nan=False),
)


@given(st.floats(-5, 5, allow_nan=False), st.lists(records, max_size=300))
def test_decomposition_identity(rho, items):
    ledger = RegretLedger()
    for t, (actor, r, rk) in enumerate(items):
        ds = 0 if actor is Actor.AGENT else None
        ledger.record(TransitionRecord(t, t, 0, 0, 0, r, actor, decision_state=ds, decision_step=ds), rho, rk)
    assert ledger.beta_steps + ledger.agent_steps == ledger.ticks
    assert ledger.identity_residual(rho) <= 1e-9 * max(1, len(items))
