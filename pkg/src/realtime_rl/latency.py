"""Duration distributions for environment steps, inference and learning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .timekernel import Duration, as_duration, quantize


class LatencyModel:
    """Base class. ``sample`` returns an exact Duration of seconds."""

    kind = "abstract"

    def sample(self, rng: np.random.Generator) -> Duration:
        raise NotImplementedError

    def mean(self) -> Duration:
        raise NotImplementedError

    def max(self) -> Duration | None:
        """Upper end of the support, or None when unbounded."""
        raise NotImplementedError

    def atoms(self) -> list[tuple[Duration, Duration]] | None:
        """``(probability, value)`` pairs for discrete models, else None."""
        return None

    @property
    def deterministic(self) -> bool:
        atoms = self.atoms()
        return atoms is not None and len({v for _, v in atoms}) == 1

    def spec(self) -> str:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"LatencyModel({self.spec()!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, LatencyModel) and self.spec() == other.spec()

    def __hash__(self) -> int:
        return hash(self.spec())


def _fmt(x: Duration) -> str:
    f = float(x)
    if Duration(repr(f)) == x:
        return repr(f)
    return str(x)


@dataclass(eq=False, repr=False)
class Constant(LatencyModel):
    value: Duration
    kind = "constant"

    def __post_init__(self):
        self.value = as_duration(self.value)

    def sample(self, rng):
        return self.value

    def mean(self):
        return self.value

    def max(self):
        return self.value

    def atoms(self):
        return [(Duration(1), self.value)]

    def spec(self):
        return f"constant:{_fmt(self.value)}"


@dataclass(eq=False, repr=False)
class Uniform(LatencyModel):
    lo: Duration
    hi: Duration
    kind = "uniform"

    def __post_init__(self):
        self.lo, self.hi = as_duration(self.lo), as_duration(self.hi)
        if self.hi < self.lo:
            raise ValueError("uniform latency needs lo <= hi")

    def sample(self, rng):
        return quantize(rng.uniform(float(self.lo), float(self.hi)))

    def mean(self):
        return (self.lo + self.hi) / 2

    def max(self):
        return self.hi

    def spec(self):
        return f"uniform:{_fmt(self.lo)},{_fmt(self.hi)}"


@dataclass(eq=False, repr=False)
class Exponential(LatencyModel):
    """Exponential durations; unbounded support."""

    scale: Duration
    kind = "exponential"

    def __post_init__(self):
        self.scale = as_duration(self.scale)

    def sample(self, rng):
        return quantize(rng.exponential(float(self.scale)))

    def mean(self):
        return self.scale

    def max(self):
        return None

    def spec(self):
        return f"exponential:{_fmt(self.scale)}"


@dataclass(eq=False, repr=False)
class Mixture(LatencyModel):
    """Weighted mixture of component models (the bimodal epsilon-greedy case)."""

    components: Sequence[tuple[Duration, LatencyModel]]
    kind = "mixture"

    def __post_init__(self):
        comps = []
        for w, m in self.components:
            w = as_duration(w)
            if not isinstance(m, LatencyModel):
                m = Constant(m)
            comps.append((w, m))
        if not comps:
            raise ValueError("mixture needs at least one component")
        if sum(w for w, _ in comps) != 1:
            raise ValueError(f"mixture weights must sum to 1, got {float(sum(w for w, _ in comps))}")
        self.components = tuple(comps)
        self._cum = np.cumsum([float(w) for w, _ in comps])

    def sample(self, rng):
        u = rng.random()
        idx = min(int(np.searchsorted(self._cum, u, side="right")), len(self.components) - 1)
        return self.components[idx][1].sample(rng)

    def mean(self):
        return sum(w * m.mean() for w, m in self.components)

    def max(self):
        maxima = [m.max() for w, m in self.components if w > 0]
        return None if any(x is None for x in maxima) else max(maxima)

    def atoms(self):
        out = []
        for w, m in self.components:
            sub = m.atoms()
            if sub is None:
                return None
            out.extend((w * p, v) for p, v in sub)
        return out

    def spec(self):
        parts = []
        for w, m in self.components:
            if isinstance(m, Constant):
                parts.append(f"{_fmt(w)}@{_fmt(m.value)}")
            else:
                raise ValueError("only constant mixture components have a text form")
        return "mixture:" + ",".join(parts)


@dataclass(eq=False, repr=False)
class EmpiricalTrace(LatencyModel):
    """Resamples uniformly from recorded durations."""

    durations: Sequence[Duration]
    kind = "trace"

    def __post_init__(self):
        self.durations = tuple(as_duration(d) for d in self.durations)
        if not self.durations:
            raise ValueError("empirical trace is empty")

    def sample(self, rng):
        return self.durations[int(rng.integers(len(self.durations)))]

    def mean(self):
        return sum(self.durations) / len(self.durations)

    def max(self):
        return max(self.durations)

    def atoms(self):
        p = Duration(1, len(self.durations))
        return [(p, d) for d in self.durations]

    def spec(self):
        return "trace:" + ",".join(_fmt(d) for d in self.durations)


def parse_latency(text: str) -> LatencyModel:
    """Parse ``kind:args`` text, e.g. ``mixture:0.5@0,0.5@0.2``.

    A bare number is read as a constant.
    """
    text = text.strip()
    if ":" not in text:
        return Constant(text)
    kind, _, args = text.partition(":")
    kind = kind.strip().lower()
    items = [a.strip() for a in args.split(",") if a.strip()]
    if kind == "constant":
        if len(items) != 1:
            raise ValueError(f"constant latency takes one value: {text!r}")
        return Constant(items[0])
    if kind == "uniform":
        if len(items) != 2:
            raise ValueError(f"uniform latency takes lo,hi: {text!r}")
        return Uniform(items[0], items[1])
    if kind == "exponential":
        if len(items) != 1:
            raise ValueError(f"exponential latency takes a mean: {text!r}")
        return Exponential(items[0])
    if kind == "mixture":
        comps = []
        for item in items:
            w, sep, v = item.partition("@")
            if not sep:
                raise ValueError(f"mixture component must be weight@value: {item!r}")
            comps.append((as_duration(w), Constant(v)))
        return Mixture(comps)
    if kind == "trace":
        return EmpiricalTrace(items)
    raise ValueError(f"unknown latency kind {kind!r}")
