"""Experiment configuration, single runs, sweeps, N* search and report emission.

Config files are INI text with four sections::

    [env]
    kind = grid_world
    width = 4
    height = 4

    [agent]
    policy = q

    [timing]
    mode = staggered_max
    n_inference = 3
    tau_m = constant:0.01
    tau_theta = constant:0.03

    [run]
    seed = 0
    horizon_ticks = 100000

Every key has a default except ``[env] kind``; unknown keys are errors.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .agents import ModalAgent, OracleAgent, QAgent, RandomAgent
from .envcore import AsyncMdpSpec, load_spec, make_fixture
from .latency import Constant, LatencyModel, _fmt, parse_latency
from .learncore import EpsilonSchedule, QTable
from .regret import eq3_inaction_bound, eq4_delay_bound, optimal_average_reward, p_minimax
from .runtime import LEARNER_COLUMNS, SCHEDULER_COLUMNS, RunSetup, SimResult, Simulation, horizon_for_seconds
from .stagger import MODES, InteractionMode
from .timekernel import Duration, as_duration, export_trace

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class RunError(RuntimeError):
    """A run aborted; ``report`` holds the partial, invalid report."""

    def __init__(self, message: str, report: "RunReport | None" = None):
        super().__init__(message)
        self.report = report


# --------------------------------------------------------------- config


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _to_pair(text: str) -> tuple[int, int]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected x,y: {text!r}")
    return int(parts[0]), int(parts[1])


def _auto(conv: Callable) -> Callable:
    def parse(text: str):
        return "auto" if text.strip().lower() == "auto" else conv(text)

    return parse


def _opt_latency(text: str):
    return None if text.strip().lower() in ("", "none") else parse_latency(text)


def _choice(*options: str) -> Callable:
    def parse(text: str) -> str:
        val = text.strip()
        if val not in options:
            raise ValueError(f"{val!r} not in {options}")
        return val

    return parse


def _fmt_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, LatencyModel):
        return value.spec()
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Duration):
        return _fmt(value)
    return str(value)


# (section, key, parser, default); attribute name == key
_FIELDS: list[tuple[str, str, Callable, Any]] = [
    ("agent", "policy", _choice("oracle", "modal", "q", "random"), "oracle"),
    ("agent", "modal_lag", _auto(int), "auto"),
    ("agent", "alpha", float, 0.1),
    ("agent", "gamma", float, 0.99),
    ("agent", "batch_size", int, 16),
    ("agent", "epsilon_start", float, 1.0),
    ("agent", "epsilon_end", float, 0.05),
    ("agent", "epsilon_steps", int, 100_000),
    ("agent", "replay_capacity", int, 100_000),
    ("agent", "smdp_key", _choice("decision", "ground"), "decision"),
    ("agent", "optimistic", _to_bool, True),
    ("timing", "mode", _choice(*MODES), "sequential"),
    ("timing", "chunk_k", int, 1),
    ("timing", "n_inference", int, 1),
    ("timing", "n_learn", int, 1),
    ("timing", "cadence", int, 1),
    ("timing", "tau_m", parse_latency, Constant("0.01")),
    ("timing", "tau_theta", parse_latency, Constant("0.01")),
    ("timing", "tau_theta_fast", _opt_latency, None),
    ("timing", "tau_l", parse_latency, Constant(0)),
    ("timing", "epsilon_spread", _auto(as_duration), "auto"),
    ("timing", "warm_start", _to_bool, True),
    ("timing", "negative_branch", _choice("complement", "literal"), "complement"),
    ("timing", "chunk_cost", as_duration, Duration(1, 20)),
    ("timing", "tick_offset", _auto(as_duration), "auto"),
    ("run", "seed", int, 0),
    ("run", "horizon_ticks", int, 100_000),
    ("run", "horizon_seconds", float, 10.0),
    ("run", "clock", _choice("virtual", "wallclock"), "virtual"),
    ("run", "warmup_fraction", float, 0.5),
    ("run", "threshold", float, 0.01),
    ("run", "n_cap", int, 64),
    ("run", "seed_policy", _choice("same", "increment"), "same"),
    ("run", "scheduler_log", str, ""),
    ("run", "learner_log", str, ""),
    ("run", "trace_log", str, ""),
    ("run", "jitter_log", str, ""),
]

# fixture -> {param: (parser, required)}
ENV_PARAMS: dict[str, dict[str, tuple[Callable, bool]]] = {
    "inaction_worst": {},
    "delay_cycle": {"n": (int, True), "p_stay": (float, True)},
    "grid_world": {"width": (int, True), "height": (int, True), "goal": (_to_pair, False), "start": (_to_pair, False)},
    "random_mdp": {
        "n_states": (int, True),
        "n_actions": (int, True),
        "mdp_seed": (int, True),
        "r_max": (float, False),
        "default_actions": (int, False),
    },
    "file": {"path": (str, True)},
}


@dataclass
class ExperimentConfig:
    env_kind: str
    env_params: dict = field(default_factory=dict)
    policy: str = "oracle"
    modal_lag: Any = "auto"
    alpha: float = 0.1
    gamma: float = 0.99
    batch_size: int = 16
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_steps: int = 100_000
    replay_capacity: int = 100_000
    smdp_key: str = "decision"
    optimistic: bool = True
    mode: str = "sequential"
    chunk_k: int = 1
    n_inference: int = 1
    n_learn: int = 1
    cadence: int = 1
    tau_m: LatencyModel = field(default_factory=lambda: Constant("0.01"))
    tau_theta: LatencyModel = field(default_factory=lambda: Constant("0.01"))
    tau_theta_fast: LatencyModel | None = None
    tau_l: LatencyModel = field(default_factory=lambda: Constant(0))
    epsilon_spread: Any = "auto"
    warm_start: bool = True
    negative_branch: str = "complement"
    chunk_cost: Any = Duration(1, 20)
    tick_offset: Any = "auto"
    seed: int = 0
    horizon_ticks: int = 100_000
    horizon_seconds: float = 10.0
    clock: str = "virtual"
    warmup_fraction: float = 0.5
    threshold: float = 0.01
    n_cap: int = 64
    seed_policy: str = "same"
    scheduler_log: str = ""
    learner_log: str = ""
    trace_log: str = ""
    jitter_log: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.env_kind not in ENV_PARAMS:
            raise ConfigError(f"unknown env kind {self.env_kind!r}; choose from {sorted(ENV_PARAMS)}")
        allowed = ENV_PARAMS[self.env_kind]
        for key in self.env_params:
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} for env kind {self.env_kind!r}")
        for key, (_, required) in allowed.items():
            if required and key not in self.env_params:
                raise ConfigError(f"env kind {self.env_kind!r} requires {key!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        for name in ("n_inference", "n_learn", "cadence", "batch_size", "chunk_k", "replay_capacity", "horizon_ticks", "n_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.horizon_seconds <= 0:
            raise ConfigError("horizon_seconds must be positive")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.tau_m.mean() <= 0:
            raise ConfigError("tau_m must have a positive mean")
        single = self.mode in ("sequential", "flipped_sequential", "one_step_lag")
        if single and self.n_inference != 1:
            raise ConfigError(f"mode {self.mode} runs exactly one inference process")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def interaction_mode(self) -> InteractionMode:
        return InteractionMode(self.mode, self.chunk_k if self.mode == "chunked" else 1)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case so misspellings are reported verbatim
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    known_sections = {"env", "agent", "timing", "run"}
    for sec in parser.sections():
        if sec not in known_sections:
            raise ConfigError(f"unknown section [{sec}]")
    if not parser.has_option("env", "kind"):
        raise ConfigError("missing required key [env] kind")
    kind = parser.get("env", "kind").strip()
    if kind not in ENV_PARAMS:
        raise ConfigError(f"unknown env kind {kind!r}; choose from {sorted(ENV_PARAMS)}")
    env_params = {}
    for key, raw in parser.items("env"):
        if key == "kind":
            continue
        if key not in ENV_PARAMS[kind]:
            raise ConfigError(f"unknown key {key!r} in [env] for kind {kind!r}")
        conv = ENV_PARAMS[kind][key][0]
        try:
            env_params[key] = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[env] {key}: {exc}") from None

    by_key = {(sec, key): (conv, default) for sec, key, conv, default in _FIELDS}
    values = {}
    for sec in ("agent", "timing", "run"):
        if not parser.has_section(sec):
            continue
        for key, raw in parser.items(sec):
            if (sec, key) not in by_key:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            conv = by_key[(sec, key)][0]
            try:
                values[key] = conv(raw)
            except (TypeError, ValueError, ArithmeticError) as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from None
    try:
        return ExperimentConfig(kind, env_params, **values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def emit_config(cfg: ExperimentConfig) -> str:
    """Full config text; ``parse_config(emit_config(c)) == c``."""
    out = io.StringIO()
    out.write("[env]\n")
    out.write(f"kind = {cfg.env_kind}\n")
    for key in ENV_PARAMS[cfg.env_kind]:
        if key in cfg.env_params:
            out.write(f"{key} = {_fmt_value(cfg.env_params[key])}\n")
    current = "env"
    for sec, key, _, _ in _FIELDS:
        if sec != current:
            out.write(f"\n[{sec}]\n")
            current = sec
        out.write(f"{key} = {_fmt_value(getattr(cfg, key))}\n")
    return out.getvalue()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# ------------------------------------------------------------------ runs


def build_spec(cfg: ExperimentConfig) -> AsyncMdpSpec:
    params = dict(cfg.env_params)
    if cfg.env_kind == "file":
        return load_spec(Path(params["path"]).read_text())
    if cfg.env_kind == "random_mdp":
        params["seed"] = params.pop("mdp_seed")
    return make_fixture(cfg.env_kind, **params)


def implied_lag(cfg: ExperimentConfig) -> int:
    """Staleness a staggered agent sees: ceil(tau_theta_max / mean tau_m)."""
    top = cfg.tau_theta.max()
    top = top if top is not None else cfg.tau_theta.mean()
    if cfg.mode == "chunked":
        top = top * (1 + cfg.chunk_cost * (cfg.chunk_k - 1))
    return math.ceil(top / cfg.tau_m.mean())


def build_agent(cfg: ExperimentConfig, spec: AsyncMdpSpec, solution):
    if cfg.policy == "oracle":
        return OracleAgent(spec, solution=solution)
    if cfg.policy == "modal":
        lag = implied_lag(cfg) if cfg.modal_lag == "auto" else int(cfg.modal_lag)
        return ModalAgent(spec, lag, solution)
    if cfg.policy == "random":
        return RandomAgent(spec)
    make = QTable.optimistic if cfg.optimistic else (lambda s, **kw: QTable.zeros(s.n_states, s.agent_actions, **kw))
    q = make(spec, alpha=cfg.alpha, gamma=cfg.gamma)
    return QAgent(spec, q, EpsilonSchedule(cfg.epsilon_start, cfg.epsilon_end, cfg.epsilon_steps))


def build_setup(cfg: ExperimentConfig, checkpoints: Sequence[int] = ()) -> RunSetup:
    try:
        spec = build_spec(cfg)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot build environment: {exc}") from None
    solution = optimal_average_reward(spec)
    horizon = cfg.horizon_ticks if cfg.clock == "virtual" else horizon_for_seconds(cfg.horizon_seconds, cfg.tau_m)
    return RunSetup(
        spec=spec,
        mode=cfg.interaction_mode,
        agent=build_agent(cfg, spec, solution),
        tau_m=cfg.tau_m,
        tau_theta=cfg.tau_theta,
        horizon_ticks=horizon,
        tau_theta_fast=cfg.tau_theta_fast,
        tau_l=cfg.tau_l,
        n_inference=cfg.n_inference,
        n_learn=cfg.n_learn,
        batch_size=cfg.batch_size,
        cadence=cfg.cadence,
        replay_capacity=cfg.replay_capacity,
        smdp_key=cfg.smdp_key,
        epsilon_spread=cfg.epsilon_spread,
        warm_start=cfg.warm_start,
        negative_branch=cfg.negative_branch,
        chunk_cost=cfg.chunk_cost,
        tick_offset=None if cfg.tick_offset == "auto" else cfg.tick_offset,
        warmup_fraction=cfg.warmup_fraction,
        seed=cfg.seed,
        checkpoints=tuple(checkpoints),
        solution=solution,
        log_scheduler=bool(cfg.scheduler_log),
        log_learner=bool(cfg.learner_log),
        keep_trace=bool(cfg.trace_log),
    )


@dataclass
class RunReport:
    config: ExperimentConfig
    valid: bool
    error: str | None
    rho_star: float
    rho_star_k: dict
    p_minimax: float
    ledger: dict
    steady: dict
    bounds: dict
    tau_I_mean: float | None
    tau_m_mean: float | None
    identity_residual: float
    scheduler: dict
    learner: dict
    mailbox: dict
    checkpoints: list = field(default_factory=list)
    n_star: int | None = None
    result: SimResult | None = field(default=None, repr=False, compare=False)

    @property
    def components(self) -> dict:
        return self.ledger["components"]

    @property
    def beta_fraction(self) -> float:
        return self.ledger["beta_fraction"]

    def check_conservation(self) -> None:
        lg, mb = self.ledger, self.mailbox
        if lg["ticks"] != lg["beta_steps"] + lg["agent_steps"]:
            raise ValueError("tick count does not equal default plus agent steps")
        if mb["registered"] != mb["consumed"] + mb["overwritten"] + mb["pending"]:
            raise ValueError("mailbox registrations are not conserved")
        if self.identity_residual > 1e-9 * max(1.0, float(lg["ticks"])):
            raise ValueError(f"regret components do not sum to total regret (residual {self.identity_residual:.3e})")

    def to_dict(self) -> dict:
        out = {
            "env": self.config.env_kind,
            "mode": self.config.mode,
            "n_inference": self.config.n_inference,
            "n_learn": self.config.n_learn,
            "seed": self.config.seed,
            "valid": self.valid,
            "error": self.error,
            "rho_star": self.rho_star,
            "rho_star_k": {str(k): v for k, v in sorted(self.rho_star_k.items())},
            "p_minimax": self.p_minimax,
            "ticks": self.ledger["ticks"],
            "agent_steps": self.ledger["agent_steps"],
            "beta_steps": self.ledger["beta_steps"],
            "beta_fraction": self.beta_fraction,
            "total_reward": self.ledger["total_reward"],
            "total_regret": self.ledger["total_regret"],
            "components": dict(self.components),
            "identity_residual": self.identity_residual,
            "bounds": dict(self.bounds),
            "tau_I_mean": self.tau_I_mean,
            "tau_m_mean": self.tau_m_mean,
            "steady": self.steady,
            "scheduler": self.scheduler,
            "learner": self.learner,
            "mailbox": self.mailbox,
            "checkpoints": [list(c) for c in self.checkpoints],
            "n_star": self.n_star,
            "config": emit_config(self.config),
        }
        return _round_floats(out)


def _round_floats(obj):
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, float):
        return float(f"{obj:.9g}") if math.isfinite(obj) else obj
    if isinstance(obj, Duration):
        return float(f"{float(obj):.9g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _histogram(values: Sequence, max_bins: int = 20) -> list:
    counts: dict = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    items = sorted(counts.items())
    if len(items) > max_bins:
        lo, hi = float(items[0][0]), float(items[-1][0])
        width = (hi - lo) / max_bins or 1.0
        binned = [0] * max_bins
        for v, c in items:
            binned[min(max_bins - 1, int((float(v) - lo) / width))] += c
        return [[lo + i * width, c] for i, c in enumerate(binned)]
    return [[float(v), c] for v, c in items]


def _downsample(points: list, n: int = 50) -> list:
    if len(points) <= n:
        return [[float(t), v] for t, v in points]
    step = len(points) / n
    return [[float(points[int(i * step)][0]), points[int(i * step)][1]] for i in range(n)] + [[float(points[-1][0]), points[-1][1]]]


def build_report(cfg: ExperimentConfig, sim: Simulation, result: SimResult, error: str | None = None) -> RunReport:
    spec = sim.spec
    ledger = result.ledger
    elapsed = float(ledger.elapsed)
    ticks, agent = ledger.ticks, ledger.agent_steps
    tau_m_mean = elapsed / ticks if ticks and elapsed > 0 else None
    tau_i_mean = elapsed / agent if agent and elapsed > 0 else None
    bounds: dict = {"eq3": None, "eq3_upper": None, "eq4": None}
    if tau_m_mean:
        if tau_i_mean is None:
            eq3 = float(ticks)  # no agent action at all: every tick is inaction
        else:
            eq3 = eq3_inaction_bound(elapsed, max(tau_i_mean, tau_m_mean), tau_m_mean)
        bounds["eq3"] = eq3
        bounds["eq3_upper"] = spec.r_max * eq3
        if tau_i_mean is not None:
            try:
                bounds["eq4"] = eq4_delay_bound(elapsed, tau_i_mean, cfg.tau_theta, cfg.tau_m.mean(), p_minimax(spec))
            except ValueError:
                bounds["eq4"] = None
    mb = sim.mailbox
    stale = result.learner.staleness if result.learner else []
    snap = ledger.snapshot()
    report = RunReport(
        config=cfg,
        valid=error is None,
        error=error,
        rho_star=result.rho_star,
        rho_star_k=result.rho_star_k,
        p_minimax=p_minimax(spec),
        ledger=snap,
        steady=result.steady(),
        bounds=bounds,
        tau_I_mean=tau_i_mean,
        tau_m_mean=tau_m_mean,
        identity_residual=ledger.identity_residual(result.rho_star),
        scheduler={
            "registered": mb.registered,
            "overwritten": mb.overwritten,
            "spacing_histogram": _histogram(result.steady_gaps()),
            "tau_hat": _downsample(result.tau_hat),
            "staleness_histogram": [[k, c] for k, c in sorted(ledger.staleness_hist.items())],
        },
        learner={
            "triggers": result.learner.triggers if result.learner else 0,
            "applied": len(result.learner.applied) if result.learner else 0,
            "missed": result.learner.missed if result.learner else 0,
            "throughput": result.learner.throughput if result.learner else None,
            "staleness_mean": sum(stale) / len(stale) if stale else None,
            "staleness_max": max(stale) if stale else None,
        },
        mailbox={"registered": mb.registered, "consumed": mb.consumed, "overwritten": mb.overwritten, "pending": mb.pending},
        checkpoints=[(t, float(at), reg) for t, at, reg in result.checkpoints],
        result=result,
    )
    return report


def _write_logs(cfg: ExperimentConfig, result: SimResult) -> None:
    def rows_csv(path, header, rows):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([f"{float(v):.9g}" if isinstance(v, (float, Duration)) else v for v in row])

    if cfg.scheduler_log:
        rows_csv(cfg.scheduler_log, SCHEDULER_COLUMNS, result.scheduler_rows)
    if cfg.learner_log:
        rows_csv(cfg.learner_log, LEARNER_COLUMNS, result.learner_rows)
    if cfg.trace_log:
        export_trace(result.trace, cfg.trace_log)
    if cfg.jitter_log and result.clock_mode == "wallclock":
        rows_csv(cfg.jitter_log, ["overshoot_s"], [(j,) for j in result.jitter])


def run(cfg: ExperimentConfig, *, checkpoints: Sequence[int] = (), write_logs: bool = True) -> RunReport:
    """Execute one configured run. Deterministic for virtual clocks."""
    sim = Simulation(build_setup(cfg, checkpoints))
    try:
        result = sim.run_virtual() if cfg.clock == "virtual" else sim.run_wallclock()
    except Exception as exc:
        partial = build_report(cfg, sim, sim._result([], [], cfg.clock), error=f"{type(exc).__name__}: {exc}")
        raise RunError(str(exc), partial) from exc
    if write_logs:
        _write_logs(cfg, result)
    return build_report(cfg, sim, result)


# ---------------------------------------------------------------- N* search


def measure_n_star(cfg: ExperimentConfig, threshold: float | None = None, *, param: str = "n_inference", cap: int | None = None) -> int:
    """Smallest process count meeting the steady-state threshold, by increasing scan.

    ``n_inference``: default-behaviour fraction <= threshold (staggered modes).
    ``n_learn``: fraction of learn triggers that complete >= 1 - threshold.
    """
    threshold = cfg.threshold if threshold is None else threshold
    cap = cfg.n_cap if cap is None else cap
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if param == "n_inference":
        if cfg.mode not in ("staggered_max", "staggered_expected"):
            raise ValueError("measuring N*_I needs a staggered mode")
        ok = lambda rep: rep.steady["beta_fraction"] <= threshold  # noqa: E731
    elif param == "n_learn":
        if cfg.policy != "q":
            raise ValueError("measuring N*_L needs a learning agent (policy = q)")
        if cfg.mode in ("sequential", "flipped_sequential"):
            raise ValueError("sequential modes learn inline with a single learner")
        ok = lambda rep: rep.steady["learn_throughput"] >= 1 - threshold  # noqa: E731
    else:
        raise ValueError(f"cannot measure N* over {param!r}")
    for n in range(1, cap + 1):
        rep = run(cfg.replace(**{param: n}), write_logs=False)
        if ok(rep):
            return n
    raise RunError(f"no {param} up to the cap of {cap} meets threshold {threshold}")


# -------------------------------------------------------------------- sweeps

SWEEP_PARAMS = ("n_inference", "n_learn", "tau_theta", "tau_L", "p_stay", "k_delay")


def _with_param(cfg: ExperimentConfig, param: str, value) -> ExperimentConfig:
    if param in ("n_inference", "n_learn"):
        return cfg.replace(**{param: int(value)})
    if param == "tau_theta":
        return cfg.replace(tau_theta=value if isinstance(value, LatencyModel) else parse_latency(str(value)))
    if param == "tau_L":
        return cfg.replace(tau_l=value if isinstance(value, LatencyModel) else parse_latency(str(value)))
    if param == "p_stay":
        if cfg.env_kind != "delay_cycle":
            raise ValueError("p_stay sweeps need the delay_cycle environment")
        return cfg.replace(env_params={**cfg.env_params, "p_stay": float(value)})
    if param == "k_delay":
        k = int(value)
        if k < 0:
            raise ValueError("k_delay must be non-negative")
        if cfg.mode not in ("staggered_max", "staggered_expected"):
            raise ValueError("k_delay sweeps need a staggered mode")
        tau = Constant(cfg.tau_m.mean() * k)
        return cfg.replace(tau_theta=tau, n_inference=max(1, k), modal_lag=k if cfg.policy == "modal" else cfg.modal_lag)
    raise ValueError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")


SUMMARY_COLUMNS = [
    "param",
    "value",
    "seed",
    "n_star",
    "beta_fraction",
    "steady_beta_fraction",
    "regret_per_tick",
    "learn",
    "inaction",
    "delay",
    "eq3",
    "eq4",
    "learn_throughput",
]


def sweep(cfg: ExperimentConfig, param: str, values: Sequence, *, measure: str | None = None, summary_path=None) -> tuple[list, list]:
    """One run per value; returns ``(reports, summary rows)``.

    ``measure`` names a process-count parameter whose N* is searched at
    each value instead of using the configured count.
    """
    if len(values) == 0:
        raise ValueError("sweep needs at least one value")
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")
    reports, rows = [], []
    for i, value in enumerate(values):
        c = _with_param(cfg, param, value)
        if cfg.seed_policy == "increment":
            c = c.replace(seed=cfg.seed + i)
        n_star = None
        if measure is not None:
            n_star = measure_n_star(c, param=measure)
            c = c.replace(**{measure: n_star})
        rep = run(c, write_logs=False)
        rep.n_star = n_star
        reports.append(rep)
        ticks = rep.ledger["ticks"]
        rows.append(
            {
                "param": param,
                "value": value.spec() if isinstance(value, LatencyModel) else value,
                "seed": c.seed,
                "n_star": n_star,
                "beta_fraction": rep.beta_fraction,
                "steady_beta_fraction": rep.steady["beta_fraction"],
                "regret_per_tick": rep.ledger["total_regret"] / ticks if ticks else None,
                "learn": rep.components["learn"],
                "inaction": rep.components["inaction"],
                "delay": rep.components["delay"],
                "eq3": rep.bounds["eq3"],
                "eq4": rep.bounds["eq4"],
                "learn_throughput": rep.steady["learn_throughput"],
            }
        )
    if summary_path is not None:
        write_csv_rows(summary_path, SUMMARY_COLUMNS, rows)
    return reports, rows


# --------------------------------------------------------------------- emit

REPORT_COLUMNS = [
    "env",
    "mode",
    "n_inference",
    "n_learn",
    "seed",
    "valid",
    "ticks",
    "agent_steps",
    "beta_steps",
    "beta_fraction",
    "steady_beta_fraction",
    "total_reward",
    "total_regret",
    "rho_star",
    "p_minimax",
    "learn",
    "inaction",
    "delay",
    "identity_residual",
    "eq3",
    "eq3_upper",
    "eq4",
    "tau_I_mean",
    "tau_m_mean",
    "registered",
    "overwritten",
    "overwritten_fraction",
    "learn_throughput",
    "learner_staleness_mean",
    "n_star",
]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, Duration)):
        return f"{float(value):.9g}"
    return str(value)


def report_row(rep: RunReport) -> dict:
    d = rep.to_dict()
    return {
        "env": d["env"],
        "mode": d["mode"],
        "n_inference": d["n_inference"],
        "n_learn": d["n_learn"],
        "seed": d["seed"],
        "valid": d["valid"],
        "ticks": d["ticks"],
        "agent_steps": d["agent_steps"],
        "beta_steps": d["beta_steps"],
        "beta_fraction": d["beta_fraction"],
        "steady_beta_fraction": d["steady"]["beta_fraction"],
        "total_reward": d["total_reward"],
        "total_regret": d["total_regret"],
        "rho_star": d["rho_star"],
        "p_minimax": d["p_minimax"],
        "learn": d["components"]["learn"],
        "inaction": d["components"]["inaction"],
        "delay": d["components"]["delay"],
        "identity_residual": d["identity_residual"],
        "eq3": d["bounds"]["eq3"],
        "eq3_upper": d["bounds"]["eq3_upper"],
        "eq4": d["bounds"]["eq4"],
        "tau_I_mean": d["tau_I_mean"],
        "tau_m_mean": d["tau_m_mean"],
        "registered": d["mailbox"]["registered"],
        "overwritten": d["mailbox"]["overwritten"],
        "overwritten_fraction": d["steady"]["overwritten_fraction"],
        "learn_throughput": d["steady"]["learn_throughput"],
        "learner_staleness_mean": d["learner"]["staleness_mean"],
        "n_star": d["n_star"],
    }


def write_csv_rows(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in columns])
    _write_text(path, buf.getvalue())


def _write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        print(text, end="")
    else:
        Path(path).write_text(text)


def emit(reports: Sequence[RunReport], fmt: str, path) -> None:
    """Write reports as CSV or JSON after re-checking their counts."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}; use csv or json")
    for rep in reports:
        if rep.valid:
            rep.check_conservation()
    if fmt == "csv":
        write_csv_rows(path, REPORT_COLUMNS, [report_row(r) for r in reports])
        return
    payload = {"schema_version": SCHEMA_VERSION, "reports": [r.to_dict() for r in reports]}
    _write_text(path, json.dumps(payload, indent=2) + "\n")
