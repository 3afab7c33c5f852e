"""Policies that inference processes run.

``act`` returns an action together with its sampled inference duration.
"""

from __future__ import annotations

import numpy as np

from .envcore import AsyncMdpSpec
from .latency import LatencyModel
from .learncore import EpsilonSchedule, QTable, select_action
from .regret import OracleSolution, modal_state_policy, optimal_average_reward
from .timekernel import Duration


def _modal_rollout(spec: AsyncMdpSpec, policy, s: int, k: int) -> list[int]:
    out, cur = [], s
    for _ in range(k):
        a = int(policy(cur))
        out.append(a)
        cur = int(np.argmax(spec.p[cur, a]))
    return out


class OracleAgent:
    """Plays a fixed state -> action table (pi* by default) on the observed state."""

    learns = False

    def __init__(self, spec: AsyncMdpSpec, table=None, solution: OracleSolution | None = None):
        self.spec = spec
        if table is None:
            table = (solution or optimal_average_reward(spec)).pi_star
        self.table = np.asarray(table, dtype=int)

    def act(self, s: int, rng: np.random.Generator, latency: LatencyModel | None, fast: LatencyModel | None = None) -> tuple[int, Duration]:
        tau = latency.sample(rng) if latency is not None else Duration(0)
        return int(self.table[s]), tau

    def act_chunk(self, s: int, k: int, rng: np.random.Generator) -> list[int]:
        return _modal_rollout(self.spec, lambda x: self.table[x], s, k)


class ModalAgent(OracleAgent):
    """pi* evaluated at the most likely state ``lag`` transitions after the observation."""

    def __init__(self, spec: AsyncMdpSpec, lag: int, solution: OracleSolution | None = None):
        super().__init__(spec, modal_state_policy(spec, lag, solution))
        self.lag = lag


class RandomAgent:
    learns = False

    def __init__(self, spec: AsyncMdpSpec):
        self.spec = spec

    def act(self, s, rng, latency, fast=None):
        a = int(rng.integers(self.spec.agent_actions))
        model = fast if fast is not None else latency
        return a, (model.sample(rng) if model is not None else Duration(0))

    def act_chunk(self, s, k, rng):
        return [int(rng.integers(self.spec.agent_actions)) for _ in range(k)]


class QAgent:
    """Epsilon-greedy over a shared :class:`QTable`."""

    learns = True

    def __init__(self, spec: AsyncMdpSpec, q: QTable, schedule: EpsilonSchedule):
        self.spec = spec
        self.q = q
        self.schedule = schedule
        self.decisions = 0

    @property
    def epsilon(self) -> float:
        return self.schedule(self.decisions)

    def act(self, s, rng, latency, fast=None):
        eps = self.epsilon
        self.decisions += 1
        with self.q.lock:
            return select_action(self.q, s, eps, rng, latency, fast)

    def act_chunk(self, s, k, rng):
        eps = self.epsilon
        self.decisions += 1
        with self.q.lock:
            first = select_action(self.q, s, eps, rng)[0]
            rest = _modal_rollout(self.spec, self.q.greedy, int(np.argmax(self.spec.p[s, first])), k - 1)
        return [first] + rest
