"""Tabular Q-learning with round-robin asynchronous update application."""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .envcore import Actor, AsyncMdpSpec, TransitionRecord
from .latency import LatencyModel
from .timekernel import Duration, as_duration


@dataclass
class QTable:
    q: np.ndarray
    alpha: float = 0.1
    gamma: float = 0.99
    version: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def zeros(cls, n_states: int, n_actions: int, *, init: float = 0.0, alpha: float = 0.1, gamma: float = 0.99) -> "QTable":
        return cls(np.full((n_states, n_actions), float(init)), alpha, gamma)

    @classmethod
    def optimistic(cls, spec: AsyncMdpSpec, *, alpha: float = 0.1, gamma: float = 0.99) -> "QTable":
        return cls.zeros(spec.n_states, spec.agent_actions, init=spec.r_max / (1.0 - gamma), alpha=alpha, gamma=gamma)

    def greedy(self, s: int) -> int:
        # np.argmax breaks ties toward the lowest index
        return int(np.argmax(self.q[s]))

    def snapshot(self) -> "QTable":
        with self.lock:
            return QTable(self.q.copy(), self.alpha, self.gamma, self.version)


class EpsilonSchedule:
    """Linear anneal from ``start`` to ``end`` over ``steps`` decisions."""

    def __init__(self, start: float = 1.0, end: float = 0.05, steps: int = 100_000):
        if not (0 <= start <= 1 and 0 <= end <= 1):
            raise ValueError("epsilon values must lie in [0, 1]")
        self.start, self.end, self.steps = start, end, steps

    def __call__(self, t: int) -> float:
        if self.steps <= 0 or t >= self.steps:
            return self.end
        return self.start + (self.end - self.start) * t / self.steps


def select_action(
    q: QTable,
    s: int,
    epsilon: float,
    rng: np.random.Generator,
    latency: LatencyModel | None = None,
    fast_latency: LatencyModel | None = None,
) -> tuple[int, Duration]:
    """Epsilon-greedy action plus its inference duration.

    Random actions draw from ``fast_latency`` when given, since they skip
    the forward pass.
    """
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    explore = epsilon > 0 and rng.random() < epsilon
    if explore:
        a = int(rng.integers(q.q.shape[1]))
        model = fast_latency if fast_latency is not None else latency
    else:
        a = q.greedy(s)
        model = latency
    tau = model.sample(rng) if model is not None else Duration(0)
    return a, tau


@dataclass
class UpdateDelta:
    changes: list
    source_version: int

    def as_dict(self) -> dict:
        out: dict = {}
        for s, a, c in self.changes:
            out[(s, a)] = out.get((s, a), 0.0) + c
        return out


def td_update(snapshot: QTable, batch: Sequence[TransitionRecord], alpha: float | None = None, gamma: float | None = None) -> UpdateDelta:
    """One-step (or semi-Markov) Q-learning increments from a frozen table.

    Records with a ``span`` attribute > 1 carry a reward already discounted
    over that many ticks and bootstrap with ``gamma ** span``.
    """
    if len(batch) == 0:
        raise ValueError("td_update needs a non-empty batch")
    alpha = snapshot.alpha if alpha is None else alpha
    gamma = snapshot.gamma if gamma is None else gamma
    q = snapshot.q
    changes = []
    for rec in batch:
        span = getattr(rec, "span", 1)
        target = rec.reward + gamma**span * float(q[rec.next_state].max())
        changes.append((rec.state, rec.action, alpha * (target - float(q[rec.state, rec.action]))))
    return UpdateDelta(changes, snapshot.version)


class ReplayBuffer:
    """Recency ring buffer with uniform sampling (with replacement)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def add(self, rec) -> None:
        with self._lock:
            self._items.append(rec)

    def sample(self, rng: np.random.Generator, batch_size: int) -> list:
        with self._lock:
            n = len(self._items)
            if n == 0:
                return []
            idx = rng.integers(n, size=batch_size)
            return [self._items[i] for i in idx]

    def oldest(self):
        return self._items[0]


@dataclass
class SmdpTransition:
    """Decision-level experience: observed state, action, discounted return, next observed state."""

    state: int
    action: int
    reward: float
    next_state: int
    span: int


class SmdpTracker:
    """Folds the tick stream into transitions between consecutive agent decisions.

    Each agent action is keyed by the state its process observed; the
    experience closes when the next agent action lands, accumulating the
    rewards of the default-behaviour ticks in between.
    """

    def __init__(self, gamma: float, key: str = "decision"):
        if key not in ("decision", "ground"):
            raise ValueError("key must be 'decision' or 'ground'")
        self.gamma = gamma
        self.key = key
        self._open: list | None = None  # [state, action, reward, discount, span]

    def push(self, rec: TransitionRecord) -> SmdpTransition | None:
        if self.key == "ground":
            if rec.actor is Actor.AGENT:
                return SmdpTransition(rec.state, rec.action, rec.reward, rec.next_state, 1)
            return None
        out = None
        if rec.actor is Actor.AGENT:
            if self._open is not None:
                s, a, ret, _, span = self._open
                out = SmdpTransition(s, a, ret, rec.decision_state, span)
            self._open = [rec.decision_state, rec.action, rec.reward, self.gamma, 1]
        elif self._open is not None:
            self._open[2] += self._open[3] * rec.reward
            self._open[3] *= self.gamma
            self._open[4] += 1
        return out


class RoundRobinLearner:
    """Ticketed learners whose deltas are applied strictly in issue order."""

    def __init__(self, n_learn: int = 1, batch_size: int = 16, cadence: int = 1):
        if n_learn < 1 or batch_size < 1 or cadence < 1:
            raise ValueError("n_learn, batch_size and cadence must be >= 1")
        self.n_learn = n_learn
        self.batch_size = batch_size
        self.cadence = cadence
        self.turn = 0
        self.busy = [False] * n_learn
        self.next_ticket = 1
        self.next_apply = 1
        self.pending: dict[int, UpdateDelta] = {}
        self.applied: list[int] = []
        self.staleness: list[int] = []
        self.triggers = 0
        self.missed = 0
        self.lock = threading.Lock()

    def trigger(self) -> tuple[int, int] | None:
        """Claim the next idle learner in round-robin order.

        Returns ``(learner, ticket)`` or None when every learner is busy.
        """
        with self.lock:
            self.triggers += 1
            for off in range(self.n_learn):
                idx = (self.turn + off) % self.n_learn
                if not self.busy[idx]:
                    self.busy[idx] = True
                    self.turn = (idx + 1) % self.n_learn
                    ticket = self.next_ticket
                    self.next_ticket += 1
                    return idx, ticket
            self.missed += 1
            return None

    def release(self, learner: int) -> None:
        with self.lock:
            self.busy[learner] = False

    def apply_in_order(self, q: QTable, delta: UpdateDelta, ticket: int) -> list[int]:
        """Buffer ``delta`` until every lower ticket is applied; returns tickets applied now."""
        with self.lock:
            if ticket < self.next_apply or ticket in self.pending:
                raise ValueError(f"duplicate ticket {ticket}")
            if ticket >= self.next_ticket:
                self.next_ticket = ticket + 1
            self.pending[ticket] = delta
            done = []
            while self.next_apply in self.pending:
                t = self.next_apply
                d = self.pending.pop(t)
                with q.lock:
                    for s, a, c in d.changes:
                        q.q[s, a] += c
                    self.staleness.append(q.version - d.source_version)
                    q.version += 1
                self.applied.append(t)
                done.append(t)
                self.next_apply += 1
            return done

    @property
    def throughput(self) -> float:
        return len(self.applied) / self.triggers if self.triggers else 1.0


def apply_in_order(learner: RoundRobinLearner, q: QTable, delta: UpdateDelta, ticket: int) -> list[int]:
    return learner.apply_in_order(q, delta, ticket)


def n_star_learn(tau_l_bar: Any, tau_m_bar: Any, cadence: int = 1) -> int:
    """Learners needed so an update completes for every learn trigger."""
    tau_l, tau_m = as_duration(tau_l_bar), as_duration(tau_m_bar)
    if tau_m <= 0 or cadence < 1:
        raise ValueError("tau_m must be positive and cadence >= 1")
    return max(1, math.ceil(tau_l / (cadence * tau_m)))
