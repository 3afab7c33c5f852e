"""Reward-rate oracles, regret bounds and the three-way regret ledger."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .envcore import Actor, AsyncMdpSpec, TransitionRecord
from .latency import LatencyModel
from .timekernel import as_duration


class OracleError(RuntimeError):
    pass


@dataclass
class OracleSolution:
    rho_star: float
    pi_star: np.ndarray
    bias: np.ndarray
    iterations: int = 0


def _greedy(values: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    # lowest index among near-maximal actions, so ties are reproducible
    best = values.max(axis=1, keepdims=True)
    return np.argmax(values >= best - tol * max(1.0, float(np.abs(best).max())), axis=1)


def relative_value_iteration(
    reward: np.ndarray,
    step: Callable[[np.ndarray], np.ndarray],
    n_states: int,
    *,
    tol: float = 1e-12,
    max_iter: int = 200_000,
    damping: float = 0.5,
) -> OracleSolution:
    """Average-reward RVI with an aperiodicity transform.

    ``step(h)`` must return the expected next-state value, shape like
    ``reward``. Stops when the span of ``T h - h`` falls under ``tol``.
    """
    h = np.zeros(n_states)
    for it in range(1, max_iter + 1):
        q = reward + damping * step(h)
        w = q.max(axis=1) + (1.0 - damping) * h
        diff = w - h
        lo, hi = diff.min(), diff.max()
        h = w - w[0]
        if hi - lo < tol * max(1.0, abs(hi)):
            rho = 0.5 * (lo + hi)
            bias = damping * h
            pi = _greedy(reward + step(bias))
            return OracleSolution(float(rho), pi, bias, it)
    raise OracleError(f"relative value iteration did not converge in {max_iter} iterations (residual span {hi - lo:.3e})")


def optimal_average_reward(env: AsyncMdpSpec, *, tol: float = 1e-12, max_iter: int = 200_000) -> OracleSolution:
    """Optimal gain over agent actions only."""
    A = env.agent_actions
    p = env.p[:, :A, :]
    r = env.r[:, :A]
    return relative_value_iteration(r, lambda h: p @ h, env.n_states, tol=tol, max_iter=max_iter)


def p_minimax(env: AsyncMdpSpec) -> float:
    return float(env.p[:, : env.agent_actions, :].max(axis=2).min())


# ------------------------------------------------------------ delayed oracle


@dataclass
class DelayedRate:
    rate: float
    stderr: float
    method: str


def modal_state_policy(env: AsyncMdpSpec, k: int, solution: OracleSolution | None = None) -> np.ndarray:
    """Observed state -> pi* of the most likely state k transitions later."""
    sol = solution or optimal_average_reward(env)
    pi = sol.pi_star
    chain = env.p[np.arange(env.n_states), pi, :]
    dist_k = np.linalg.matrix_power(chain, k) if k > 0 else np.eye(env.n_states)
    modal = np.argmax(dist_k, axis=1)
    return pi[modal]


def simulate_delayed_policy(
    env: AsyncMdpSpec,
    policy: np.ndarray,
    k: int,
    n_steps: int,
    rng: np.random.Generator,
    *,
    n_batches: int = 50,
) -> tuple[float, float]:
    """Mean per-step reward when each action is chosen from the state k steps earlier.

    Returns ``(mean, batch-means standard error)``.
    """
    S = env.n_states
    cum = np.cumsum(env.p, axis=2)
    cum[..., -1] = 1.0
    cum_rows = [[list(cum[s, a]) for a in range(env.n_actions)] for s in range(S)]
    reward = env.r.tolist()
    pol = [int(a) for a in policy]
    u = rng.random(n_steps)
    from bisect import bisect_right

    s = env.initial_state
    history = [s] * (k + 1)  # ring of the last k+1 states
    head = 0
    rewards = np.empty(n_steps)
    for t in range(n_steps):
        observed = history[(head + 1) % (k + 1)] if k > 0 else s
        a = pol[observed]
        rewards[t] = reward[s][a]
        s = min(bisect_right(cum_rows[s][a], u[t]), S - 1)
        head = (head + 1) % (k + 1)
        history[head] = s
    mean = float(rewards.mean())
    nb = max(2, min(n_batches, n_steps))
    batch = rewards[: (n_steps // nb) * nb].reshape(nb, -1).mean(axis=1)
    se = float(batch.std(ddof=1) / math.sqrt(nb))
    return mean, se


def _augmented_rate(env: AsyncMdpSpec, k: int) -> OracleSolution:
    """Best policy that sees the true state and its k queued actions."""
    S, A = env.n_states, env.agent_actions
    queues = list(itertools.product(range(A), repeat=k))
    qidx = {q: i for i, q in enumerate(queues)}
    nq = len(queues)
    n_aug = S * nq
    heads = np.array([q[0] for q in queues])
    # next queue after popping the head and appending b
    shift = np.array([[qidx[q[1:] + (b,)] for b in range(A)] for q in queues])  # (nq, A)
    reward = np.repeat(env.r[:, heads][:, :, None], A, axis=2).reshape(n_aug, A)
    probs = env.p[:, heads, :]  # (S, nq, S')

    def step(h):
        hv = h.reshape(S, nq)  # hv[s', q']
        # value of (s', shift[q, b]) for every q, b, s'
        nxt = hv[:, shift]  # (S', nq, A)
        out = np.einsum("sqt,tqb->sqb", probs, nxt)
        return out.reshape(n_aug, A)

    return relative_value_iteration(reward, step, n_aug)


def delayed_oracle(
    env: AsyncMdpSpec,
    k: int,
    *,
    exact_cap: int = 20_000,
    allow_mc: bool = True,
    mc_steps: int = 200_000,
    seed: int = 0,
    solution: OracleSolution | None = None,
) -> DelayedRate:
    """Reward rate of the best policy whose actions land k transitions late."""
    if k < 0:
        raise ValueError("k must be non-negative")
    sol = solution or optimal_average_reward(env)
    if k == 0 or env.is_deterministic():
        # deterministic dynamics: replay pi* open-loop
        return DelayedRate(sol.rho_star, 0.0, "exact")
    if env.n_states * env.agent_actions**k <= exact_cap:
        return DelayedRate(_augmented_rate(env, k).rho_star, 0.0, "exact")
    if not allow_mc:
        raise OracleError(f"augmented state space {env.n_states}*{env.agent_actions}^{k} exceeds cap {exact_cap}")
    policy = modal_state_policy(env, k, sol)
    mean, se = simulate_delayed_policy(env, policy, k, mc_steps, np.random.default_rng(seed))
    return DelayedRate(mean, se, "monte_carlo")


def delayed_oracle_rate(env: AsyncMdpSpec, k: int, **kw) -> float:
    return delayed_oracle(env, k, **kw).rate


# ------------------------------------------------------------------ bounds


def eq3_inaction_bound(tau: Any, tau_i_bar: Any, tau_m_bar: Any) -> float:
    """Expected default-behaviour steps over ``tau`` seconds."""
    tau, ti, tm = float(tau), float(tau_i_bar), float(tau_m_bar)
    if tm <= 0:
        raise ValueError("tau_m_bar must be positive")
    if ti < tm:
        raise ValueError("interaction time cannot be shorter than the environment step")
    return (tau / ti) * (ti - tm) / tm


def expected_delay_factor(latency: LatencyModel, tau_m: Any, p_mm: float, *, rng: np.random.Generator | None = None, n_mc: int = 100_000) -> float:
    """E[1 - p_mm ** ceil(tau_theta / tau_m)]."""
    if not 0 < p_mm <= 1:
        raise ValueError("p_minimax must lie in (0, 1]")
    if p_mm == 1:
        return 0.0
    tm = as_duration(tau_m)
    atoms = latency.atoms()
    if atoms is not None:
        return float(sum(float(w) * (1.0 - p_mm ** math.ceil(v / tm)) for w, v in atoms))
    rng = rng or np.random.default_rng(0)
    ks = [math.ceil(latency.sample(rng) / tm) for _ in range(n_mc)]
    return float(np.mean(1.0 - p_mm ** np.array(ks, dtype=float)))


def eq4_delay_bound(tau: Any, tau_i_bar: Any, latency: LatencyModel, tau_m: Any, p_mm: float, **kw) -> float:
    ti = float(tau_i_bar)
    if ti <= 0:
        raise ValueError("tau_i_bar must be positive")
    return (float(tau) / ti) * expected_delay_factor(latency, tau_m, p_mm, **kw)


# ------------------------------------------------------------------ ledger


class _Sum:
    """Neumaier compensated accumulator."""

    __slots__ = ("total", "comp")

    def __init__(self):
        self.total = 0.0
        self.comp = 0.0

    def add(self, x: float) -> None:
        t = self.total + x
        if abs(self.total) >= abs(x):
            self.comp += (self.total - t) + x
        else:
            self.comp += (x - t) + self.total
        self.total = t

    @property
    def value(self) -> float:
        return self.total + self.comp


@dataclass
class RegretLedger:
    ticks: int = 0
    beta_steps: int = 0
    agent_steps: int = 0
    elapsed: Any = 0
    _reward: _Sum = field(default_factory=_Sum)
    _learn: _Sum = field(default_factory=_Sum)
    _inaction: _Sum = field(default_factory=_Sum)
    _delay: _Sum = field(default_factory=_Sum)
    _rho_star_sum: _Sum = field(default_factory=_Sum)
    _last_agent_time: Any = None
    tau_i_count: int = 0
    _tau_i_sum: _Sum = field(default_factory=_Sum)
    staleness_hist: dict = field(default_factory=dict)

    @property
    def total_reward(self) -> float:
        return self._reward.value

    @property
    def components(self) -> dict:
        return {"learn": self._learn.value, "inaction": self._inaction.value, "delay": self._delay.value}

    @property
    def total_regret(self) -> float:
        return self._rho_star_sum.value - self._reward.value

    @property
    def tau_i_mean(self) -> float | None:
        return self._tau_i_sum.value / self.tau_i_count if self.tau_i_count else None

    @property
    def beta_fraction(self) -> float:
        return self.beta_steps / self.ticks if self.ticks else 0.0

    def record(self, rec: TransitionRecord, rho_star: float, rho_star_k: float | None = None) -> None:
        self.ticks += 1
        self.elapsed = rec.time
        self._reward.add(rec.reward)
        self._rho_star_sum.add(rho_star)
        if rec.actor is Actor.DEFAULT:
            self.beta_steps += 1
            self._inaction.add(rho_star - rec.reward)
            return
        self.agent_steps += 1
        rk = rho_star if rho_star_k is None else rho_star_k
        self._delay.add(rho_star - rk)
        self._learn.add(rk - rec.reward)
        k = rec.staleness
        if k is not None:
            self.staleness_hist[k] = self.staleness_hist.get(k, 0) + 1
        if self._last_agent_time is not None:
            self._tau_i_sum.add(float(rec.time - self._last_agent_time))
            self.tau_i_count += 1
        self._last_agent_time = rec.time

    def identity_residual(self, rho_star: float) -> float:
        """|sum of components - (rho* * ticks - total reward)|."""
        comps = self.components
        lhs = math.fsum([comps["learn"], comps["inaction"], comps["delay"]])
        return abs(lhs - (rho_star * self.ticks - self.total_reward))

    def snapshot(self) -> dict:
        return {
            "ticks": self.ticks,
            "beta_steps": self.beta_steps,
            "agent_steps": self.agent_steps,
            "elapsed_s": float(self.elapsed),
            "total_reward": self.total_reward,
            "total_regret": self.total_regret,
            "components": self.components,
            "tau_i_mean": self.tau_i_mean,
            "beta_fraction": self.beta_fraction,
        }


def record(ledger: RegretLedger, rec: TransitionRecord, rho_star: float, rho_star_k: float | None = None) -> None:
    ledger.record(rec, rho_star, rho_star_k)
