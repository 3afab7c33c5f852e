"""Virtual and wall-clock time for the interaction simulator.

Virtual time is exact: durations are rational seconds (``gmpy2.mpq``, which
interoperates with :class:`fractions.Fraction`), so tick grids, staggering
offsets and registration gaps compare without rounding. The wall-clock adapter exposes the same ``now``/sleep surface on
top of ``time.monotonic``.
"""

from __future__ import annotations

import csv
import enum
import heapq
import math
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable

from gmpy2 import mpq

Duration = mpq

NS = 10**9


def as_duration(value: Any) -> Duration:
    """Convert seconds to an exact non-negative rational.

    Floats go through their shortest repr so ``0.01`` means 1/100 rather
    than the nearest binary double.
    """
    if isinstance(value, bool):
        raise TypeError(f"cannot interpret {value!r} as a duration")
    if isinstance(value, (Duration, Fraction, int)):
        out = Duration(value)
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"duration must be finite, got {value!r}")
        out = Duration(repr(value))
    elif isinstance(value, str):
        try:
            out = Duration(Fraction(value.strip()))
        except ValueError:
            raise ValueError(f"cannot parse duration {value!r}") from None
    else:
        raise TypeError(f"cannot interpret {value!r} as a duration")
    if out < 0:
        raise ValueError(f"duration must be non-negative, got {value!r}")
    return out


def quantize(seconds: float) -> Duration:
    """Round a sampled float duration to whole nanoseconds."""
    if not math.isfinite(seconds) or seconds < 0:
        raise ValueError(f"bad sampled duration {seconds!r}")
    return Duration(round(seconds * NS), NS)


class PastSchedulingError(ValueError):
    """Raised when an event is scheduled before the current time."""


class EventKind(enum.Enum):
    ENV_TICK = "env_tick"
    PROCESS_WAKE = "process_wake"
    LEARNER_APPLY = "learner_apply"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    payload: Any = None


@dataclass
class EventQueue:
    """Min-heap of events keyed by ``(time, seq)``."""

    now: Duration = field(default_factory=lambda: Duration(0))
    _heap: list = field(default_factory=list)
    _seq: int = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, event: Event, at: Any) -> int:
        at = as_duration(at)
        if at < self.now:
            raise PastSchedulingError(f"cannot schedule {event.kind.value} at {float(at)} s, now is {float(self.now)} s")
        ticket = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (at, ticket, event))
        return ticket

    def peek_time(self) -> Duration | None:
        return self._heap[0][0] if self._heap else None

    def pending_at(self, t: Duration) -> bool:
        """True if any queued event fires exactly at ``t``."""
        return bool(self._heap) and self._heap[0][0] == t

    def pop(self) -> tuple[Duration, int, Event]:
        at, seq, event = heapq.heappop(self._heap)
        self.now = at
        return at, seq, event


TraceEntry = tuple  # (time, seq, Event)


def schedule(queue: EventQueue, event: Event, at: Any) -> int:
    return queue.schedule(event, at)


def run_until(queue: EventQueue, t_end: Any, handler: Callable[[EventQueue, Duration, Event], None]) -> list[TraceEntry]:
    """Deliver every event with time <= ``t_end`` in ``(time, seq)`` order.

    ``handler(queue, time, event)`` may schedule further events. A
    :class:`PastSchedulingError` raised by the handler aborts the run.
    """
    t_end = as_duration(t_end)
    trace: list[TraceEntry] = []
    while queue._heap and queue._heap[0][0] <= t_end:
        at, seq, event = queue.pop()
        trace.append((at, seq, event))
        handler(queue, at, event)
    return trace


def export_trace(trace: Iterable[TraceEntry], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "seq", "event_kind", "payload"])
        for at, seq, event in trace:
            payload = "" if event.payload is None else event.payload
            writer.writerow([f"{float(at):.9g}", seq, event.kind.value, payload])


class VirtualClock:
    """Clock backed by an :class:`EventQueue`; never touches hardware time."""

    mode = "virtual"

    def __init__(self, queue: EventQueue | None = None):
        self.queue = queue if queue is not None else EventQueue()

    def now(self) -> Duration:
        return self.queue.now

    def request_wake(self, process_id: int, after: Any) -> int:
        # zero-delay wakes land behind everything already queued at `now`
        return self.queue.schedule(Event(EventKind.PROCESS_WAKE, process_id), self.queue.now + as_duration(after))


class WallClock:
    """Monotone hardware clock with deadline sleeps and jitter logging."""

    mode = "wallclock"

    def __init__(self, spin_threshold: float = 0.0):
        self._t0 = time.monotonic()
        self.spin_threshold = spin_threshold
        self.jitter: list[float] = []
        self._lock = threading.Lock()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def sleep_until(self, deadline: float) -> float:
        """Block until ``deadline`` (seconds since start); return the overshoot."""
        while True:
            remaining = deadline - self.now()
            if remaining <= 0:
                break
            if remaining > self.spin_threshold:
                time.sleep(remaining - self.spin_threshold)
        overshoot = self.now() - deadline
        with self._lock:
            self.jitter.append(overshoot)
        return overshoot

    def request_wake(self, process_id: int, after: Any) -> float:
        """Sleep for ``after`` seconds; returns the measured jitter."""
        return self.sleep_until(self.now() + float(after))

    def jitter_histogram(self, bin_width: float = 1e-4, n_bins: int = 50) -> list[tuple[float, int]]:
        counts = [0] * n_bins
        with self._lock:
            samples = list(self.jitter)
        for j in samples:
            idx = min(n_bins - 1, max(0, int(j / bin_width)))
            counts[idx] += 1
        return [(i * bin_width, c) for i, c in enumerate(counts)]

    def export_jitter(self, path, bin_width: float = 1e-4, n_bins: int = 50) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_start_s", "count"])
            for start, count in self.jitter_histogram(bin_width, n_bins):
                writer.writerow([f"{start:.9g}", count])
