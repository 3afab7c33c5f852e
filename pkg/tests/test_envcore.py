from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from realtime_rl.envcore import (
    ActionMailbox,
    Actor,
    AsyncEnv,
    AsyncMdpSpec,
    delay_cycle,
    dump_spec,
    grid_world,
    inaction_worst,
    load_spec,
    make_fixture,
    random_mdp,
    register,
    register_chunk,
    tick,
)


def test_delay_cycle_row():
    spec = delay_cycle(10, 0.9)
    row = spec.p[3, 1]
    assert row[3] == pytest.approx(0.9) and row[4] == pytest.approx(0.1)
    assert row.sum() == pytest.approx(1.0)
    assert spec.r[3, 3] == 1.0 and spec.r[3, 1] == 0.0


def test_delay_cycle_spreads_mass_below_one_half():
    spec = delay_cycle(8, 0.3)
    assert spec.p.max() == pytest.approx(0.3)


def test_inaction_default_step_earns_nothing():
    spec = inaction_worst()
    env = AsyncEnv(spec)
    rec = tick(env, ActionMailbox(), np.random.default_rng(0), 0)
    assert rec.actor is Actor.DEFAULT
    assert (rec.state, rec.next_state) == (0, 1)
    assert rec.action == spec.agent_actions
    assert rec.reward == 0.0


def test_inaction_agent_action_returns_to_first_state():
    env = AsyncEnv(inaction_worst(), state=1)
    box = ActionMailbox()
    register(box, 0, Fraction(0))
    rec = env.tick(box, np.random.default_rng(0), Fraction(1, 100))
    assert rec.actor is Actor.AGENT and rec.next_state == 0 and rec.reward == 1.0


def test_second_write_overwrites():
    box = ActionMailbox()
    assert register(box, 1, Fraction(1, 1000)) is False
    assert register(box, 0, Fraction(2, 1000)) is True
    env = AsyncEnv(grid_world(3, 3))
    rec = env.tick(box, np.random.default_rng(0), Fraction(1, 100))
    assert rec.action == 0
    assert box.overwritten == 1 and box.consumed == 1 and box.registered == 2


def test_action_not_ready_is_not_consumed():
    box = ActionMailbox()
    register(box, 1, Fraction(2, 100))
    assert box.take(Fraction(1, 100)) is None
    assert box.take(Fraction(2, 100)).action == 1


def test_chunk_queue_is_consumed_in_order_and_replaced():
    box = ActionMailbox()
    register_chunk(box, [1, 2, 3], Fraction(0))
    assert box.take(0).action == 1
    assert register_chunk(box, [0], Fraction(0)) == 2
    assert box.take(0).action == 0 and box.take(0) is None
    with pytest.raises(ValueError):
        register_chunk(box, [], 0)


def test_out_of_range_agent_action_is_rejected():
    env = AsyncEnv(grid_world(2, 2))
    box = ActionMailbox()
    register(box, 4, 0)
    with pytest.raises(ValueError):
        env.tick(box, np.random.default_rng(0), 0)


def test_staleness_counts_transitions_since_observation():
    env = AsyncEnv(grid_world(3, 3))
    box = ActionMailbox()
    rng = np.random.default_rng(0)
    s, step = env.observe()
    env.tick(box, rng, 0)
    env.tick(box, rng, 1)
    register(box, 1, 0, decision_state=s, decision_step=step)
    rec = env.tick(box, rng, 2)
    assert rec.staleness == 2 and rec.decision_state == s


def _bad(**changes):
    spec = grid_world(2, 2)
    kw = dict(n_states=4, agent_actions=4, default_actions=1, p=spec.p.copy(), r=spec.r.copy(), r_max=1.0, beta=spec.beta.copy())
    kw.update(changes)
    return kw


def test_spec_validation():
    kw = _bad()
    kw["p"][0, 0, 0] += 0.1
    with pytest.raises(ValueError):
        AsyncMdpSpec(**kw)
    with pytest.raises(ValueError):
        AsyncMdpSpec(**_bad(r_max=0.5))
    with pytest.raises(ValueError):
        AsyncMdpSpec(**_bad(beta=np.full((4, 1), 0.5)))
    with pytest.raises(ValueError):
        AsyncMdpSpec(**_bad(initial_state=9))


def test_unknown_fixture():
    with pytest.raises(ValueError):
        make_fixture("nope")


@pytest.mark.parametrize("spec", [inaction_worst(), delay_cycle(5, 0.7), grid_world(3, 2), random_mdp(4, 3, seed=7, default_actions=2)])
def test_text_format_round_trip(spec):
    again = load_spec(dump_spec(spec))
    assert np.array_equal(again.p, spec.p) and np.array_equal(again.r, spec.r)
    assert np.array_equal(again.beta, spec.beta)
    assert (again.n_states, again.agent_actions, again.default_actions) == (spec.n_states, spec.agent_actions, spec.default_actions)
    assert dump_spec(again) == dump_spec(spec)


def test_random_mdp_is_reproducible():
    a, b = random_mdp(5, 2, seed=3), random_mdp(5, 2, seed=3)
    assert np.array_equal(a.p, b.p) and np.array_equal(a.r, b.r)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**31 - 1), st.integers(0, 2**31 - 1))
def test_sampled_transitions_follow_support(n, a, mdp_seed, seed):
    spec = random_mdp(n, a, seed=mdp_seed)
    rng = np.random.default_rng(seed)
    for s in range(n):
        for act in range(spec.n_actions):
            nxt = spec.sample_next(s, act, rng)
            assert spec.p[s, act, nxt] > 0


def test_empirical_transition_frequencies(rng):
    spec = delay_cycle(4, 0.75)
    hits = sum(spec.sample_next(0, 0, rng) == 0 for _ in range(20000))
    assert abs(hits / 20000 - 0.75) < 0.015


def test_default_steps_follow_the_default_chain():
    spec = random_mdp(4, 2, seed=11, default_actions=2)
    env, box, rng = AsyncEnv(spec), ActionMailbox(), np.random.default_rng(5)
    counts = np.zeros((4, 4))
    for t in range(100_000):
        rec = env.tick(box, rng, t)
        assert rec.actor is Actor.DEFAULT
        counts[rec.state, rec.next_state] += 1
    n = counts.sum(axis=1, keepdims=True)
    expected = spec.p_beta()
    se = np.sqrt(expected * (1 - expected) / n)
    assert (np.abs(counts / n - expected) <= 3 * se + 1e-12).all()
