from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import discounted_q_star
from realtime_rl.envcore import Actor, TransitionRecord, delay_cycle, grid_world
from realtime_rl.latency import Constant, Mixture
from realtime_rl.learncore import (
    EpsilonSchedule,
    QTable,
    ReplayBuffer,
    RoundRobinLearner,
    SmdpTracker,
    UpdateDelta,
    apply_in_order,
    n_star_learn,
    select_action,
    td_update,
)


def _rec(s, a, r, s2, actor=Actor.AGENT, step=0, decision_state=None):
    return TransitionRecord(step, 0, s, a, s2, r, actor, decision_state=s if decision_state is None else decision_state)


def test_greedy_tie_goes_to_lowest_index(rng):
    q = QTable(np.array([[0.1, 0.5, 0.5]]))
    a, tau = select_action(q, 0, 0.0, rng, Constant(0.1))
    assert a == 1 and tau == F(1, 10)


def test_full_exploration_is_uniform_and_fast(rng):
    q = QTable(np.zeros((1, 4)))
    draws = [select_action(q, 0, 1.0, rng, Constant(0.2), Constant(0)) for _ in range(8000)]
    counts = np.bincount([a for a, _ in draws], minlength=4) / 8000
    assert np.abs(counts - 0.25).max() < 0.03
    assert all(tau == 0 for _, tau in draws)


def test_half_exploration_mean_latency(rng):
    q = QTable(np.zeros((1, 2)))
    taus = [float(select_action(q, 0, 0.5, rng, Constant(0.2), Constant(0))[1]) for _ in range(10_000)]
    assert abs(np.mean(taus) - 0.1) < 0.005


def test_epsilon_out_of_range(rng):
    with pytest.raises(ValueError):
        select_action(QTable(np.zeros((1, 2))), 0, 1.5, rng)


def test_td_update_zero_table():
    delta = td_update(QTable.zeros(2, 2, alpha=0.1, gamma=0.99), [_rec(0, 1, 1.0, 1)])
    assert delta.as_dict() == {(0, 1): pytest.approx(0.1)}
    assert delta.source_version == 0


def test_td_update_sums_repeated_pairs():
    delta = td_update(QTable.zeros(2, 2), [_rec(0, 1, 1.0, 1)] * 3)
    assert delta.as_dict()[(0, 1)] == pytest.approx(0.3)


def test_td_update_empty_batch():
    with pytest.raises(ValueError):
        td_update(QTable.zeros(2, 2), [])


def test_td_fixed_point_matches_value_iteration():
    spec = delay_cycle(4, 0.8)
    gamma = 0.9
    target = discounted_q_star(spec.p, spec.r, spec.agent_actions, gamma)
    rng = np.random.default_rng(0)
    q = QTable.zeros(4, 4, alpha=0.1, gamma=gamma)
    pairs = [(s, a) for s in range(4) for a in range(4)]
    for it in range(6000):
        alpha = (1 + it) ** -0.7
        batch = [_rec(s, a, spec.r[s, a], spec.sample_next(s, a, rng)) for s, a in pairs]
        for s, a, c in td_update(q, batch, alpha=alpha).changes:
            q.q[s, a] += c
    assert np.abs(q.q - target).max() < 0.02 * np.abs(target).max()
    assert (q.q.argmax(axis=1) == np.arange(4)).all()


def test_in_order_application():
    learner = RoundRobinLearner(3)
    q = QTable.zeros(1, 1)
    for _ in range(3):
        learner.trigger()
    deltas = {t: UpdateDelta([(0, 0, float(t))], 0) for t in (1, 2, 3)}
    assert apply_in_order(learner, q, deltas[2], 2) == []
    assert apply_in_order(learner, q, deltas[3], 3) == []
    assert apply_in_order(learner, q, deltas[1], 1) == [1, 2, 3]
    assert learner.applied == [1, 2, 3] and q.version == 3 and q.q[0, 0] == 6.0


def test_duplicate_ticket_rejected():
    learner = RoundRobinLearner(2)
    q = QTable.zeros(1, 1)
    learner.apply_in_order(q, UpdateDelta([], 0), 1)
    with pytest.raises(ValueError):
        learner.apply_in_order(q, UpdateDelta([], 0), 1)


@given(st.permutations(list(range(1, 12))))
def test_any_completion_order_applies_sequentially(order):
    learner = RoundRobinLearner(4)
    q = QTable.zeros(1, 1)
    for t in order:
        learner.apply_in_order(q, UpdateDelta([(0, 0, 1.0)], 0), t)
    assert learner.applied == list(range(1, 12))
    assert q.version == 11


def _pipeline(n_learn, ticks, duration):
    """Trigger every tick; each update takes ``duration`` ticks and snapshots at its start."""
    learner = RoundRobinLearner(n_learn)
    q = QTable.zeros(1, 1)
    running = []  # (finish_tick, learner, ticket, source_version)
    for t in range(ticks):
        for job in [j for j in running if j[0] == t]:
            running.remove(job)
            learner.release(job[1])
            learner.apply_in_order(q, UpdateDelta([], job[3]), job[2])
        claim = learner.trigger()
        if claim is not None:
            running.append((t + duration, claim[0], claim[1], q.version))
    return learner


def test_round_robin_staleness_hand_trace():
    learner = _pipeline(3, 40, 3)
    assert learner.staleness[:3] == [0, 1, 2]
    assert set(learner.staleness[3:]) == {2}
    assert learner.missed == 0


def test_single_learner_is_synchronous():
    learner = _pipeline(1, 20, 1)
    assert set(learner.staleness) == {0}


def test_too_few_learners_miss_triggers():
    learner = _pipeline(2, 60, 4)
    assert learner.missed > 0 and learner.throughput < 0.6
    assert max(learner.staleness) <= 1


def test_trigger_round_robin_turns():
    learner = RoundRobinLearner(3)
    assert [learner.trigger()[0] for _ in range(3)] == [0, 1, 2]
    assert learner.trigger() is None
    learner.release(1)
    assert learner.trigger() == (1, 4)


def test_n_star_learn_examples():
    assert n_star_learn(F(50, 1000), F(10, 1000)) == 5
    assert n_star_learn(F(5, 1000), F(10, 1000)) == 1
    assert n_star_learn(F(50, 1000), F(10, 1000), cadence=5) == 1
    with pytest.raises(ValueError):
        n_star_learn(0.05, 0)


def test_replay_buffer_evicts_oldest(rng):
    buf = ReplayBuffer(3)
    for i in range(5):
        buf.add(i)
    assert len(buf) == 3 and buf.oldest() == 2
    assert set(buf.sample(rng, 50)) <= {2, 3, 4}
    assert ReplayBuffer(2).sample(rng, 4) == []
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_epsilon_schedule():
    sched = EpsilonSchedule(1.0, 0.05, 100)
    assert sched(0) == 1.0 and sched(50) == pytest.approx(0.525) and sched(100) == 0.05
    with pytest.raises(ValueError):
        EpsilonSchedule(1.2)


def test_optimistic_init():
    q = QTable.optimistic(grid_world(2, 2), gamma=0.9)
    assert q.q.shape == (4, 4) and np.allclose(q.q, 10.0)


def test_smdp_tracker_accumulates_default_rewards():
    tr = SmdpTracker(gamma=0.5)
    assert tr.push(_rec(0, 1, 1.0, 1, decision_state=0)) is None
    assert tr.push(_rec(1, 2, 2.0, 2, actor=Actor.DEFAULT)) is None
    out = tr.push(_rec(2, 0, 0.0, 3, decision_state=5))
    assert (out.state, out.action, out.next_state, out.span) == (0, 1, 5, 2)
    assert out.reward == pytest.approx(1.0 + 0.5 * 2.0)


def test_smdp_ground_key_passes_agent_steps():
    tr = SmdpTracker(gamma=0.9, key="ground")
    assert tr.push(_rec(1, 2, 2.0, 2, actor=Actor.DEFAULT)) is None
    out = tr.push(_rec(3, 1, 1.0, 0, decision_state=0))
    assert (out.state, out.next_state, out.span) == (3, 0, 1)


def test_mixture_latency_is_accepted(rng):
    q = QTable(np.zeros((1, 2)))
    _, tau = select_action(q, 0, 0.0, rng, Mixture([(0.5, 0), (0.5, 0.2)]))
    assert tau in (0, F(1, 5))
