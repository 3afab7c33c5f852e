"""Acceptance checks. Each returns a :class:`Outcome`; ``run_all`` prints one line per check."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import harness
from .envcore import delay_cycle
from .latency import parse_latency
from .regret import modal_state_policy, optimal_average_reward, simulate_delayed_policy
from .stagger import n_star_predicted
from .timekernel import Duration

TAU_M = "0.01"
BIMODAL_TAU_M = Duration(10000, 597275)  # 1 / 59.7275 s


@dataclass
class Outcome:
    id: str
    title: str
    passed: bool | None  # None: not applicable
    detail: str
    known_failure: bool = False

    @property
    def ok(self) -> bool:
        return self.passed is not False

    def line(self) -> str:
        tag = "N/A " if self.passed is None else ("PASS" if self.passed else "FAIL")
        note = " (known, see decisions ledger)" if self.known_failure and not self.passed else ""
        return f"[{tag}] {self.id:>3} {self.title}: {self.detail}{note}"


@dataclass
class Suite:
    """Collects every report produced so cross-cutting checks can inspect them."""

    reports: list = field(default_factory=list)

    def run(self, cfg, **kw) -> harness.RunReport:
        rep = harness.run(cfg, write_logs=False, **kw)
        self.reports.append(rep)
        return rep


def config(text: str, **changes) -> harness.ExperimentConfig:
    cfg = harness.parse_config(text)
    return cfg.replace(**changes) if changes else cfg


def inaction_config(mode: str, n: int = 1, tau_theta: str = "0.03", horizon: int = 100_000, **changes):
    return config(
        f"""
[env]
kind = inaction_worst
[agent]
policy = oracle
[timing]
mode = {mode}
n_inference = {n}
tau_m = constant:{TAU_M}
tau_theta = constant:{tau_theta}
tau_l = constant:0
[run]
horizon_ticks = {horizon}
""",
        **changes,
    )


# ------------------------------------------------------------------ checks


def check_linear_scaling(suite: Suite) -> Outcome:
    mults = [1, 2, 4, 8, 16]
    found = {}
    for mode in ("staggered_max", "staggered_expected"):
        stars = []
        for m in mults:
            cfg = inaction_config(mode, 1, tau_theta=str(Duration(TAU_M) * m), horizon=4000)
            stars.append(harness.measure_n_star(cfg, 0.01, cap=2 * m + 2))
        found[mode] = stars
    slopes = {k: float(np.polyfit(mults, v, 1)[0]) for k, v in found.items()}
    ok = all(v == mults for v in found.values()) and all(abs(s - 1.0) <= 0.02 for s in slopes.values())
    detail = f"max-time N*={found['staggered_max']} slope {slopes['staggered_max']:.4f}; expected-time N*={found['staggered_expected']} slope {slopes['staggered_expected']:.4f}"
    return Outcome("1", "N*_I scales linearly with inference time", ok, detail)


def _bimodal_config(mode: str, n: int = 1, horizon: int = 20_000):
    cfg = inaction_config(mode, n, horizon=horizon)
    return cfg.replace(tau_m=parse_latency(f"constant:{BIMODAL_TAU_M}"), tau_theta=parse_latency("mixture:0.5@0,0.5@0.2"))


def check_bimodal_formula(suite: Suite) -> Outcome:
    lat = parse_latency("mixture:0.5@0,0.5@0.2")
    pred_exp = n_star_predicted("expected", lat, BIMODAL_TAU_M)
    pred_max = n_star_predicted("max", lat, BIMODAL_TAU_M)
    measured_max = harness.measure_n_star(_bimodal_config("staggered_max"), 0.01, cap=16)
    ok = pred_exp == 6 and pred_max == 12 and measured_max == 12
    return Outcome("2", "bimodal latency: predicted N* (expected-time, max-time) and measured max-time", ok, f"predicted expected-time={pred_exp}, max-time={pred_max}; measured max-time={measured_max}")


def check_bimodal_measured_expected(suite: Suite) -> Outcome:
    beta = {}
    for n in (5, 6):
        rep = suite.run(_bimodal_config("staggered_expected", n))
        beta[n] = rep.steady["beta_fraction"]
    ok = beta[6] <= 0.01 < beta[5]
    return Outcome(
        "2b",
        "bimodal latency: measured expected-time N* = 6",
        ok,
        f"steady beta at N=5: {beta[5]:.4f}, at N=6: {beta[6]:.4f}",
        known_failure=True,
    )


def check_sequential_floor(suite: Suite) -> Outcome:
    rep = suite.run(inaction_config("sequential"))
    ticks = rep.ledger["ticks"]
    rate = rep.ledger["total_regret"] / ticks
    warm = rep.result.warm
    first = (warm["ticks"] * rep.rho_star - warm["total_reward"]) / warm["ticks"]
    second_ticks = ticks - warm["ticks"]
    second = sum(rep.steady["components"].values()) / second_ticks
    drift = abs(second - first) / first
    ok = abs(rate - 2 / 3) <= 0.01 * (2 / 3) and drift < 0.01
    return Outcome("3", "sequential interaction keeps a regret floor", ok, f"regret/tick {rate:.5f} (target 2/3), halves {first:.5f} vs {second:.5f}")


def check_inaction_eliminated(suite: Suite) -> Outcome:
    rep = suite.run(inaction_config("staggered_max", 3))
    st = rep.steady
    inaction_rate = st["components"]["inaction"] / st["ticks"]
    ok = st["beta_fraction"] < 0.005 and inaction_rate < 0.01
    return Outcome("4", "staggered interaction eliminates inaction", ok, f"steady beta {st['beta_fraction']:.5f}, inaction/tick {inaction_rate:.5f}")


def check_delay_regret(suite: Suite, n_steps: int = 1_000_000) -> Outcome:
    parts, ok = [], True
    for p, k in [(0.9, 1), (0.9, 4), (0.9, 8), (0.8, 2), (0.95, 4)]:
        env = delay_cycle(32, p)
        sol = optimal_average_reward(env)
        mean, _ = simulate_delayed_policy(env, modal_state_policy(env, k, sol), k, n_steps, np.random.default_rng(k))
        regret, target = sol.rho_star - mean, 1 - p**k
        good = abs(regret - target) <= 0.02 * target
        ok &= good
        parts.append(f"p={p},k={k}: {regret:.4f}/{target:.4f}")
    env = delay_cycle(32, 1.0)
    sol = optimal_average_reward(env)
    mean, _ = simulate_delayed_policy(env, modal_state_policy(env, 4, sol), 4, 10_000, np.random.default_rng(0))
    exact_zero = sol.rho_star - mean == 0.0
    ok &= exact_zero
    parts.append(f"p=1: {sol.rho_star - mean}")
    return Outcome("5", "delay regret matches 1 - p^k", ok, "; ".join(parts))


def check_identity(suite: Suite) -> Outcome:
    if not suite.reports:
        return Outcome("6", "regret components sum to total regret", None, "no runs collected")
    worst = max(r.identity_residual for r in suite.reports)
    return Outcome("6", "regret components sum to total regret", worst <= 1e-9, f"max residual {worst:.3e} over {len(suite.reports)} runs")


def check_bound_sandwich(suite: Suite) -> Outcome:
    bad = []
    for r in suite.reports:
        upper, lower = r.bounds["eq3_upper"], r.bounds["eq3"]
        inaction = r.components["inaction"]
        if upper is not None and inaction > upper + 1e-9 * max(1.0, upper):
            bad.append(f"{r.config.mode}: {inaction} > {upper}")
        if r.config.env_kind == "inaction_worst" and r.config.policy == "oracle" and lower is not None and inaction < 0.99 * lower:
            bad.append(f"{r.config.mode}: {inaction} < 0.99*{lower}")
    return Outcome("6b", "inaction regret within its upper and lower forms", not bad, "; ".join(bad) or f"{len(suite.reports)} runs inside")


def check_spacing(suite: Suite) -> Outcome:
    rep = suite.run(inaction_config("staggered_max", 4, tau_theta="0.04", horizon=40_000))
    gaps = rep.result.steady_gaps()
    want = rep.result.tau_hat_final / 4
    distinct = set(gaps)
    ok = len(gaps) + 1 >= 10_000 and distinct == {want}
    return Outcome("7", "max-time registrations are evenly spaced", ok, f"{len(gaps) + 1} registrations, gaps {sorted(float(g) for g in distinct)} vs {float(want)}")


def check_overwrite(suite: Suite) -> Outcome:
    zero = suite.run(inaction_config("staggered_max", 4, tau_theta="0.04", horizon=20_000, epsilon_spread=Duration(0)))
    spread = suite.run(inaction_config("staggered_max", 4, tau_theta="0.04", horizon=20_000))
    f0, f1 = zero.steady["overwritten_fraction"], spread.steady["overwritten_fraction"]
    ok = abs(f0 - 0.75) <= 0.001 and f1 == 0
    return Outcome("8", "zero spread makes staggered processes collide", ok, f"overwritten fraction {f0:.4f} (eps=0), {f1:.4f} (default)")


def _learner_config(mult: int, n_learn: int = 1, horizon: int = 4000):
    return config(
        f"""
[env]
kind = grid_world
width = 4
height = 4
[agent]
policy = q
[timing]
mode = staggered_max
n_inference = 1
n_learn = {n_learn}
cadence = 1
tau_m = constant:{TAU_M}
tau_theta = constant:{TAU_M}
tau_l = constant:{Duration(TAU_M) * mult}
[run]
horizon_ticks = {horizon}
"""
    )


def check_round_robin(suite: Suite) -> Outcome:
    mults = [1, 2, 4, 8]
    stars, ordered = [], True
    for m in mults:
        n = harness.measure_n_star(_learner_config(m), 0.01, param="n_learn", cap=2 * m + 2)
        stars.append(n)
        rep = suite.run(_learner_config(m, n))
        applied = rep.result.learner.applied
        ordered &= applied == list(range(1, len(applied) + 1)) and all(s >= 0 for s in rep.result.learner.staleness)
    ok = stars == mults and ordered
    return Outcome("9", "N*_L scales with learning time; updates apply in ticket order", ok, f"N*_L={stars}, ordering {'intact' if ordered else 'BROKEN'}")


def _grid_q_config(seed: int, horizon: int):
    return config(
        f"""
[env]
kind = grid_world
width = 4
height = 4
[agent]
policy = q
optimistic = true
epsilon_steps = 20000
[timing]
mode = staggered_max
n_inference = 2
n_learn = 1
tau_m = constant:{TAU_M}
tau_theta = constant:0.02
tau_l = constant:0
[run]
seed = {seed}
horizon_ticks = {horizon}
"""
    )


def check_sublinear(suite: Suite, horizon: int = 80_000) -> Outcome:
    cps = [horizon // 8 * m for m in (1, 2, 4, 8)]
    parts, ok = [], True
    for seed in range(3):
        rep = suite.run(_grid_q_config(seed, horizon), checkpoints=cps)
        rates = [reg / at for _, at, reg in rep.checkpoints]
        good = len(rates) == 4 and all(b < a for a, b in zip(rates, rates[1:]))
        ok &= good
        parts.append("seed %d: %s" % (seed, ", ".join(f"{r:.3f}" for r in rates)))
    return Outcome("10", "learning regret per second decreases (sublinear)", ok, "; ".join(parts))


def check_out_of_scope(suite: Suite) -> Outcome:
    return Outcome("11", "emulator-scale returns", None, "out of scope: needs game emulators and deep networks")


def check_wallclock(suite: Suite, seconds: float = 10.0) -> Outcome:
    virtual = suite.run(inaction_config("staggered_max", 3, horizon=harness.horizon_for_seconds(seconds, parse_latency(f"constant:{TAU_M}"))))
    wall = suite.run(inaction_config("staggered_max", 3, clock="wallclock", horizon_seconds=seconds))
    bv, bw = virtual.steady["beta_fraction"], wall.steady["beta_fraction"]
    ok = abs(bw - bv) <= 0.02
    return Outcome("12", "wall-clock run agrees with virtual time", ok, f"steady beta virtual {bv:.4f}, wall-clock {bw:.4f}")


CHECKS: list[tuple[str, Callable[[Suite], Outcome]]] = [
    ("1", check_linear_scaling),
    ("2", check_bimodal_formula),
    ("2b", check_bimodal_measured_expected),
    ("3", check_sequential_floor),
    ("4", check_inaction_eliminated),
    ("5", check_delay_regret),
    ("7", check_spacing),
    ("8", check_overwrite),
    ("9", check_round_robin),
    ("10", check_sublinear),
    ("11", check_out_of_scope),
    ("12", check_wallclock),
    # cross-cutting checks last so they see every collected run
    ("6", check_identity),
    ("6b", check_bound_sandwich),
]


def run_all(only=None, echo: Callable[[str], None] | None = print) -> list[Outcome]:
    suite = Suite()
    out = []
    for cid, fn in CHECKS:
        if only is not None and cid not in only and cid not in ("6", "6b"):
            continue
        try:
            res = fn(suite)
        except Exception as exc:  # a crashing check is a failed check
            res = Outcome(cid, fn.__name__, False, f"{type(exc).__name__}: {exc}")
        out.append(res)
        if echo is not None:
            echo(res.line())
    return out
