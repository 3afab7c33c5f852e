"""Inference staggering: Maximum-Time and Expected-Time schedulers.

Process ids are 1-based. Each completion runs ``on_complete_max`` or
``on_complete_expected`` inside the shared state's lock; the returned
:class:`SchedulingDirective` tells the completing process how long to sleep
before registering its action.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any

from .latency import LatencyModel
from .timekernel import Duration, as_duration

MODES = ("sequential", "flipped_sequential", "one_step_lag", "staggered_max", "staggered_expected", "chunked")
STAGGERED = ("staggered_max", "staggered_expected")


@dataclass(frozen=True)
class InteractionMode:
    kind: str
    k: int = 1

    def __post_init__(self):
        if self.kind not in MODES:
            raise ValueError(f"unknown interaction mode {self.kind!r}; choose from {MODES}")
        if self.kind == "chunked" and self.k < 1:
            raise ValueError("chunk size k must be >= 1")

    @property
    def staggered(self) -> bool:
        return self.kind in STAGGERED

    @property
    def flip_order(self) -> bool:
        return self.kind == "flipped_sequential"

    @classmethod
    def sequential(cls, flip_order: bool = False) -> "InteractionMode":
        return cls("flipped_sequential" if flip_order else "sequential")

    @classmethod
    def chunked(cls, k: int) -> "InteractionMode":
        return cls("chunked", k)


@dataclass
class SchedulingDirective:
    self_sleep: Duration
    delay_increments: list = field(default_factory=list)
    register_now: bool = True


@dataclass
class StaggerState:
    n_inference: int
    delay: list = field(default_factory=list)
    tau_hat_max: Duration = Duration(0)
    tau_tot: Duration = Duration(0)
    a_tot: int = 0
    epsilon_spread: Duration = Duration(0)
    negative_branch: str = "complement"
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        if self.n_inference < 1:
            raise ValueError("need at least one inference process")
        if self.negative_branch not in ("complement", "literal"):
            raise ValueError("negative_branch must be 'complement' or 'literal'")
        self.epsilon_spread = as_duration(self.epsilon_spread)
        if not self.delay:
            n = self.n_inference
            self.delay = [self.epsilon_spread * (i - 1) / n for i in range(1, n + 1)]
        self.delay = [as_duration(d) for d in self.delay]

    @property
    def tau_hat_bar(self) -> Duration:
        return self.tau_tot / self.a_tot if self.a_tot else Duration(0)

    def take_delay(self, proc: int) -> Duration:
        """Read and reset the accumulated delay for ``proc``."""
        with self.lock:
            d = self.delay[proc - 1]
            self.delay[proc - 1] = Duration(0)
            return d


def dist(x: int, y: int, n: int) -> int:
    """How far process ``x`` is behind process ``y`` in the cycle of ``n``."""
    if not (1 <= x <= n and 1 <= y <= n):
        raise ValueError(f"process ids must lie in 1..{n}")
    if x == y:
        raise ValueError("dist is undefined for a process and itself")
    return (x - y) % n


def _spread(state: StaggerState, proc: int, weights) -> list:
    incs = []
    n = state.n_inference
    for num in range(1, n + 1):
        if num == proc:
            continue
        inc = weights(dist(num, proc, n))
        state.delay[num - 1] += inc
        incs.append((num, inc))
    return incs


def on_complete_max(state: StaggerState, proc: int, tau_theta: Any) -> SchedulingDirective:
    tau = as_duration(tau_theta)
    n = state.n_inference
    with state.lock:
        if tau >= state.tau_hat_max:
            d_tau = tau - state.tau_hat_max
            incs = _spread(state, proc, lambda d: d * d_tau / n)
            state.tau_hat_max = tau
            return SchedulingDirective(Duration(0), incs)
        return SchedulingDirective(state.tau_hat_max - tau, [])


def on_complete_expected(state: StaggerState, proc: int, tau_theta: Any) -> SchedulingDirective:
    tau = as_duration(tau_theta)
    n = state.n_inference
    with state.lock:
        old = state.tau_hat_bar
        state.a_tot += 1
        state.tau_tot += tau
        d_tau = state.tau_hat_bar - old
        mag = abs(d_tau)
        if d_tau == 0:
            incs = []
        elif d_tau > 0:
            incs = _spread(state, proc, lambda d: d * mag / n)
        elif state.negative_branch == "complement":
            incs = _spread(state, proc, lambda d: (n - d) * mag / n)
        else:
            incs = _spread(state, proc, lambda d: (n - 1) * d * mag / n)
        return SchedulingDirective(Duration(0), incs)


def n_star_predicted(kind: str, latency: LatencyModel, tau_m_bar: Any) -> int:
    """Processes needed so staggered completions arrive at least once per tick."""
    tau_m = as_duration(tau_m_bar)
    if tau_m <= 0:
        raise ValueError("mean environment step time must be positive")
    if kind == "max":
        top = latency.max()
        if top is None:
            raise ValueError("maximum-time staggering needs a latency model with bounded support")
        need = top
    elif kind == "expected":
        need = latency.mean()
    else:
        raise ValueError(f"kind must be 'max' or 'expected', got {kind!r}")
    return max(1, math.ceil(need / tau_m))


def chunk_latency(base: Any, k: int, cost: Any = Duration(1, 20)) -> Duration:
    """Inference time for a k-action chunk: base * (1 + cost * (k - 1))."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return as_duration(base) * (1 + as_duration(cost) * (k - 1))
