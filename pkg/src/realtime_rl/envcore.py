"""Asynchronous MDPs: the environment never waits for the agent.

Action indices ``0..A-1`` belong to the agent; ``A..A+A_beta-1`` are the
default-behaviour actions that fire on ticks where no agent action is ready.
"""

from __future__ import annotations

import enum
import io
import threading
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .latency import (
    Constant,
    EmpiricalTrace,
    Exponential,
    LatencyModel,
    Mixture,
    Uniform,
    parse_latency,
)

__all__ = [
    "Actor",
    "ActionMailbox",
    "AsyncEnv",
    "AsyncMdpSpec",
    "PendingAction",
    "TransitionRecord",
    "delay_cycle",
    "dump_spec",
    "grid_world",
    "inaction_worst",
    "load_spec",
    "make_fixture",
    "random_mdp",
    "register",
    "register_chunk",
    "tick",
    # latency models travel with the environment description
    "Constant",
    "EmpiricalTrace",
    "Exponential",
    "LatencyModel",
    "Mixture",
    "Uniform",
    "parse_latency",
]

ROW_TOL = 1e-12


class Actor(enum.Enum):
    AGENT = "agent"
    DEFAULT = "default"


@dataclass
class AsyncMdpSpec:
    n_states: int
    agent_actions: int
    default_actions: int
    p: np.ndarray  # (S, A + A_beta, S)
    r: np.ndarray  # (S, A + A_beta)
    r_max: float
    beta: np.ndarray  # (S, A_beta)
    initial_state: int = 0
    name: str = "custom"

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        n_act = self.agent_actions + self.default_actions
        if self.n_states < 1 or self.agent_actions < 1 or self.default_actions < 1:
            raise ValueError("need at least one state, one agent action and one default action")
        if self.p.shape != (self.n_states, n_act, self.n_states):
            raise ValueError(f"p has shape {self.p.shape}, expected {(self.n_states, n_act, self.n_states)}")
        if self.r.shape != (self.n_states, n_act):
            raise ValueError(f"r has shape {self.r.shape}, expected {(self.n_states, n_act)}")
        if self.beta.shape != (self.n_states, self.default_actions):
            raise ValueError(f"beta has shape {self.beta.shape}")
        if (self.p < 0).any() or np.abs(self.p.sum(axis=2) - 1).max() > ROW_TOL:
            raise ValueError("transition rows must be non-negative and sum to 1")
        if (self.beta < 0).any() or np.abs(self.beta.sum(axis=1) - 1).max() > ROW_TOL:
            raise ValueError("beta rows must be non-negative and sum to 1")
        if not np.isfinite(self.r).all() or np.abs(self.r).max() > self.r_max:
            raise ValueError("rewards must be finite and bounded by r_max")
        if not 0 <= self.initial_state < self.n_states:
            raise ValueError("initial_state out of range")
        self._cum_p = np.cumsum(self.p, axis=2)
        self._cum_beta = np.cumsum(self.beta, axis=1)

    @property
    def n_actions(self) -> int:
        return self.agent_actions + self.default_actions

    def p_beta(self) -> np.ndarray:
        """Markov chain followed under the default behaviour."""
        pb = self.p[:, self.agent_actions:, :]
        return np.einsum("sbt,sb->st", pb, self.beta)

    def r_beta(self) -> np.ndarray:
        return (self.r[:, self.agent_actions:] * self.beta).sum(axis=1)

    def is_deterministic(self) -> bool:
        return bool(np.all(self.p[:, : self.agent_actions, :].max(axis=2) == 1.0))

    def sample_next(self, s: int, a: int, rng: np.random.Generator) -> int:
        u = rng.random()
        row = self._cum_p[s, a]
        nxt = int(np.searchsorted(row, u, side="right"))
        return min(nxt, self.n_states - 1)

    def sample_default(self, s: int, rng: np.random.Generator) -> int:
        if self.default_actions == 1:
            return self.agent_actions
        u = rng.random()
        idx = int(np.searchsorted(self._cum_beta[s], u, side="right"))
        return self.agent_actions + min(idx, self.default_actions - 1)


# ---------------------------------------------------------------- fixtures


def inaction_worst() -> AsyncMdpSpec:
    """Two states, two agent actions that lead to s1, a default action to s2.

    Reward is earned by the transition into s1, i.e. ``r(s, a) = 1`` for the
    agent actions and 0 for the default action, so following the default
    behaviour earns nothing and any agent action earns the optimal rate 1.
    """
    S, A = 2, 2
    p = np.zeros((S, A + 1, S))
    p[:, 0, 0] = p[:, 1, 0] = 1.0
    p[:, 2, 1] = 1.0
    r = np.zeros((S, A + 1))
    r[:, :A] = 1.0
    return AsyncMdpSpec(S, A, 1, p, r, 1.0, np.ones((S, 1)), 0, name="inaction_worst")


def delay_cycle(n: int, p_stay: float) -> AsyncMdpSpec:
    """Cycle of ``n`` states; reward 1 for the action matching the state.

    Every action (default included) keeps the state with probability
    ``p_stay``; the rest of the mass moves forward around the cycle. When
    ``p_stay < 1/2`` the remainder is spread over successive states in
    chunks of at most ``p_stay`` so the largest row entry stays ``p_stay``.
    """
    if n < 2:
        raise ValueError("delay_cycle needs n >= 2")
    if not (1.0 / n - 1e-15 <= p_stay <= 1.0):
        raise ValueError(f"p_stay must lie in [1/n, 1], got {p_stay}")
    row = np.zeros(n)
    row[0] = p_stay
    rest, j = 1.0 - p_stay, 1
    while rest > 1e-15 and j < n:
        take = min(p_stay, rest)
        row[j] = take
        rest -= take
        j += 1
    row /= row.sum()
    p = np.zeros((n, n + 1, n))
    for s in range(n):
        p[s, :, :] = np.roll(row, s)
    r = np.zeros((n, n + 1))
    r[np.arange(n), np.arange(n)] = 1.0
    return AsyncMdpSpec(n, n, 1, p, r, 1.0, np.ones((n, 1)), 0, name=f"delay_cycle({n},{p_stay})")


GRID_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))  # up, right, down, left


def grid_world(width: int, height: int, goal: tuple[int, int] | None = None, start: tuple[int, int] = (0, 0)) -> AsyncMdpSpec:
    """Deterministic grid; any agent action in the goal pays 1 and resets to start.

    Moves into walls leave the agent in place. The default action is a noop
    with reward 0.
    """
    if width < 1 or height < 1 or width * height < 2:
        raise ValueError("grid needs at least two cells")
    goal = (width - 1, height - 1) if goal is None else tuple(goal)
    for x, y in (goal, start):
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError("goal/start outside the grid")
    if goal == tuple(start):
        raise ValueError("goal and start must differ")
    S, A = width * height, 4
    idx = lambda x, y: y * width + x  # noqa: E731
    p = np.zeros((S, A + 1, S))
    r = np.zeros((S, A + 1))
    g, s0 = idx(*goal), idx(*start)
    for y in range(height):
        for x in range(width):
            s = idx(x, y)
            p[s, A, s] = 1.0
            for a, (dx, dy) in enumerate(GRID_MOVES):
                if s == g:
                    p[s, a, s0] = 1.0
                    r[s, a] = 1.0
                    continue
                nx, ny = x + dx, y + dy
                if not (0 <= nx < width and 0 <= ny < height):
                    nx, ny = x, y
                p[s, a, idx(nx, ny)] = 1.0
    return AsyncMdpSpec(S, A, 1, p, r, 1.0, np.ones((S, 1)), s0, name=f"grid_world({width},{height})")


def random_mdp(n_states: int, n_actions: int, seed: int, r_max: float = 1.0, default_actions: int = 1) -> AsyncMdpSpec:
    """Dirichlet(1) transition rows and uniform [0, r_max] rewards, fully seeded."""
    rng = np.random.default_rng(seed)
    n_act = n_actions + default_actions
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_act))
    p /= p.sum(axis=2, keepdims=True)
    r = rng.uniform(0.0, r_max, size=(n_states, n_act))
    beta = np.full((n_states, default_actions), 1.0 / default_actions)
    return AsyncMdpSpec(n_states, n_actions, default_actions, p, r, r_max, beta, 0, name=f"random_mdp({n_states},{n_actions},{seed})")


FIXTURES = {
    "inaction_worst": inaction_worst,
    "delay_cycle": delay_cycle,
    "grid_world": grid_world,
    "random_mdp": random_mdp,
}


def make_fixture(kind: str, **params) -> AsyncMdpSpec:
    try:
        factory = FIXTURES[kind]
    except KeyError:
        raise ValueError(f"unknown fixture {kind!r}; choose from {sorted(FIXTURES)}") from None
    return factory(**params)


# ------------------------------------------------------------ text format

FORMAT_HEADER = "# async-mdp v1"


def dump_spec(spec: AsyncMdpSpec) -> str:
    """Plain-text matrix form: header counts, beta rows, then p and r row-major."""
    out = io.StringIO()
    print(FORMAT_HEADER, file=out)
    print(f"name {spec.name}", file=out)
    print(f"states {spec.n_states}", file=out)
    print(f"agent_actions {spec.agent_actions}", file=out)
    print(f"default_actions {spec.default_actions}", file=out)
    print(f"r_max {spec.r_max!r}", file=out)
    print(f"initial_state {spec.initial_state}", file=out)
    print("beta", file=out)
    for row in spec.beta:
        print(" ".join(repr(float(v)) for v in row), file=out)
    print("p", file=out)
    for s in range(spec.n_states):
        for a in range(spec.n_actions):
            print(" ".join(repr(float(v)) for v in spec.p[s, a]), file=out)
    print("r", file=out)
    for row in spec.r:
        print(" ".join(repr(float(v)) for v in row), file=out)
    return out.getvalue()


def load_spec(text: str) -> AsyncMdpSpec:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != FORMAT_HEADER:
        raise ValueError("missing async-mdp header")
    it = iter(lines[1:])
    head: dict[str, str] = {}
    for ln in it:
        if ln == "beta":
            break
        key, _, val = ln.partition(" ")
        head[key] = val
    S, A, B = int(head["states"]), int(head["agent_actions"]), int(head["default_actions"])

    def rows(n, width):
        out = []
        for _ in range(n):
            vals = [float(v) for v in next(it).split()]
            if len(vals) != width:
                raise ValueError(f"expected {width} values per row")
            out.append(vals)
        return np.array(out)

    beta = rows(S, B)
    if next(it) != "p":
        raise ValueError("expected p section")
    p = rows(S * (A + B), S).reshape(S, A + B, S)
    if next(it) != "r":
        raise ValueError("expected r section")
    r = rows(S, A + B)
    return AsyncMdpSpec(S, A, B, p, r, float(head["r_max"]), beta, int(head["initial_state"]), name=head.get("name", "custom"))


# ------------------------------------------------------ mailbox and ticks


@dataclass
class PendingAction:
    action: int
    ready_time: Any
    source: int | None = None
    decision_state: int | None = None
    decision_step: int | None = None


@dataclass
class ActionMailbox:
    """Single-slot, last-writer-wins action register plus a chunk queue."""

    slot: PendingAction | None = None
    chunk_queue: list = field(default_factory=list)
    registered: int = 0
    consumed: int = 0
    overwritten: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def register(self, action: int, ready_time, source: int | None = None, *, decision_state: int | None = None, decision_step: int | None = None) -> bool:
        """Write the slot; returns True if an unconsumed action was displaced."""
        with self.lock:
            displaced = self.slot is not None
            if displaced:
                self.overwritten += 1
            self.slot = PendingAction(action, ready_time, source, decision_state, decision_step)
            self.registered += 1
            return displaced

    def register_chunk(self, actions: Sequence[int], ready_time, source: int | None = None, *, decision_state: int | None = None, decision_step: int | None = None) -> int:
        """Replace the chunk queue; returns how many queued actions were dropped."""
        if len(actions) == 0:
            raise ValueError("chunk must contain at least one action")
        with self.lock:
            dropped = len(self.chunk_queue)
            self.overwritten += dropped
            self.chunk_queue = [PendingAction(int(a), ready_time, source, decision_state, decision_step) for a in actions]
            self.registered += len(actions)
            return dropped

    def take(self, now) -> PendingAction | None:
        with self.lock:
            if self.slot is not None and self.slot.ready_time <= now:
                entry, self.slot = self.slot, None
                self.consumed += 1
                return entry
            if self.chunk_queue and self.chunk_queue[0].ready_time <= now:
                self.consumed += 1
                return self.chunk_queue.pop(0)
            return None

    @property
    def pending(self) -> int:
        return (self.slot is not None) + len(self.chunk_queue)


def register(mailbox: ActionMailbox, action: int, ready_time, source: int | None = None, **meta) -> bool:
    return mailbox.register(action, ready_time, source, **meta)


def register_chunk(mailbox: ActionMailbox, actions: Sequence[int], ready_time, source: int | None = None, **meta) -> int:
    return mailbox.register_chunk(actions, ready_time, source, **meta)


@dataclass
class TransitionRecord:
    step: int
    time: Any
    state: int
    action: int
    next_state: int
    reward: float
    actor: Actor
    decision_state: int | None = None
    decision_step: int | None = None
    semi_step: int | None = None
    source: int | None = None

    @property
    def staleness(self) -> int | None:
        """Transitions between the observed state and the one acted in."""
        if self.decision_step is None:
            return None
        return self.step - self.decision_step


class AsyncEnv:
    """Mutable environment state driven by :meth:`tick`."""

    def __init__(self, spec: AsyncMdpSpec, state: int | None = None):
        self.spec = spec
        self.state = spec.initial_state if state is None else state
        self.steps = 0
        self.agent_steps = 0

    def observe(self) -> tuple[int, int]:
        """Current state and the number of transitions that produced it."""
        return self.state, self.steps

    def tick(self, mailbox: ActionMailbox, rng: np.random.Generator, now) -> TransitionRecord:
        spec = self.spec
        s = self.state
        entry = mailbox.take(now)
        if entry is not None:
            a, actor = entry.action, Actor.AGENT
            if not 0 <= a < spec.agent_actions:
                raise ValueError(f"agent action {a} out of range")
        else:
            a, actor = spec.sample_default(s, rng), Actor.DEFAULT
        nxt = spec.sample_next(s, a, rng)
        rec = TransitionRecord(
            step=self.steps,
            time=now,
            state=s,
            action=a,
            next_state=nxt,
            reward=float(spec.r[s, a]),
            actor=actor,
        )
        if actor is Actor.AGENT:
            rec.decision_state = entry.decision_state if entry.decision_state is not None else s
            rec.decision_step = entry.decision_step if entry.decision_step is not None else self.steps
            rec.semi_step = self.agent_steps
            rec.source = entry.source
            self.agent_steps += 1
        self.state = nxt
        self.steps += 1
        return rec


def tick(env: AsyncEnv, mailbox: ActionMailbox, rng: np.random.Generator, now) -> TransitionRecord:
    return env.tick(mailbox, rng, now)
