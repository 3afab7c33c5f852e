"""Interaction runtime: environment ticks, inference processes and learners.

Process logic is written once as generators that yield either a sleep
duration or :data:`NEXT_TICK`. Two drivers execute them: a discrete-event
driver over an :class:`EventQueue` (exact, deterministic) and a thread
driver over the hardware clock.

Same-instant ordering in virtual time: an environment tick that finds other
events queued at its own instant re-queues itself once, so registrations
made exactly at a tick boundary are consumed by that tick.
"""

from __future__ import annotations

import math
import queue as queue_mod
import threading
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .envcore import ActionMailbox, AsyncEnv, AsyncMdpSpec
from .latency import Constant, LatencyModel
from .learncore import ReplayBuffer, RoundRobinLearner, SmdpTracker, UpdateDelta, td_update
from .regret import OracleSolution, RegretLedger, delayed_oracle, optimal_average_reward
from .stagger import (
    InteractionMode,
    StaggerState,
    chunk_latency,
    on_complete_expected,
    on_complete_max,
)
from .timekernel import Duration, Event, EventKind, EventQueue, VirtualClock, WallClock, as_duration


class _NextTick:
    def __repr__(self) -> str:
        return "NEXT_TICK"


NEXT_TICK = _NextTick()

SCHEDULER_COLUMNS = ["time_s", "proc", "tau_theta_s", "slept_s", "registered", "overwritten", "tau_hat_s"]
LEARNER_COLUMNS = ["time_s", "ticket", "staleness_versions", "batch_size", "apply_latency_s"]


@dataclass
class RunSetup:
    spec: AsyncMdpSpec
    mode: InteractionMode
    agent: Any
    tau_m: LatencyModel
    tau_theta: LatencyModel
    horizon_ticks: int
    tau_theta_fast: LatencyModel | None = None
    tau_l: LatencyModel = field(default_factory=lambda: Constant(0))
    n_inference: int = 1
    n_learn: int = 1
    batch_size: int = 16
    cadence: int = 1
    replay_capacity: int = 100_000
    smdp_key: str = "decision"
    epsilon_spread: Any = "auto"
    warm_start: bool = True
    negative_branch: str = "complement"
    chunk_cost: Any = Duration(1, 20)
    tick_offset: Any = None
    warmup_fraction: float = 0.5
    seed: int = 0
    checkpoints: tuple = ()
    solution: OracleSolution | None = None
    log_scheduler: bool = False
    log_learner: bool = False
    keep_trace: bool = False

    def __post_init__(self):
        if self.horizon_ticks < 1:
            raise ValueError("horizon must be at least one tick")
        if self.n_inference < 1:
            raise ValueError("need at least one inference process")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if not self.mode.staggered and self.mode.kind != "chunked" and self.n_inference != 1:
            raise ValueError(f"mode {self.mode.kind} runs exactly one inference process")


@dataclass
class SimResult:
    ledger: RegretLedger
    rho_star: float
    rho_star_k: dict
    warm: dict
    final: dict
    registration_times: list
    tau_hat: list
    learner: RoundRobinLearner | None
    checkpoints: list
    scheduler_rows: list
    learner_rows: list
    trace: list
    jitter: list
    clock_mode: str
    tau_hat_final: Any = None

    def steady(self) -> dict:
        """Counters over the post-warm-up window."""
        w, f = self.warm, self.final
        ticks = f["ticks"] - w["ticks"]
        out = {
            "ticks": ticks,
            "beta_fraction": (f["beta_steps"] - w["beta_steps"]) / ticks if ticks else 0.0,
            "registered": f["registered"] - w["registered"],
            "overwritten": f["overwritten"] - w["overwritten"],
            "components": {k: f["components"][k] - w["components"][k] for k in f["components"]},
        }
        out["overwritten_fraction"] = out["overwritten"] / out["registered"] if out["registered"] else 0.0
        trig = f["triggers"] - w["triggers"]
        out["learn_throughput"] = (f["applied"] - w["applied"]) / trig if trig else 1.0
        return out

    def steady_gaps(self) -> list:
        t0 = self.warm["time"]
        times = [t for t in self.registration_times if t >= t0]
        return [b - a for a, b in zip(times, times[1:])]


class Simulation:
    def __init__(self, setup: RunSetup):
        self.setup = setup
        spec = setup.spec
        self.spec = spec
        self.env = AsyncEnv(spec)
        self.mailbox = ActionMailbox()
        self.ledger = RegretLedger()
        self.solution = setup.solution or optimal_average_reward(spec)
        self.rho_star = self.solution.rho_star
        self._rho_k: dict[int, float] = {}
        self._env_lock = threading.Lock()

        root = np.random.SeedSequence(setup.seed)
        env_ss, tick_ss, learn_ss, proc_ss = root.spawn(4)
        self.rng_env = np.random.default_rng(env_ss)
        self.rng_tick = np.random.default_rng(tick_ss)
        self.rng_learn = np.random.default_rng(learn_ss)
        self.proc_rngs = {i + 1: np.random.default_rng(s) for i, s in enumerate(proc_ss.spawn(setup.n_inference))}

        self.learning = bool(getattr(setup.agent, "learns", False))
        self.learner: RoundRobinLearner | None = None
        if self.learning:
            n_learn = 1 if setup.mode.kind in ("sequential", "flipped_sequential") else setup.n_learn
            self.learner = RoundRobinLearner(n_learn, setup.batch_size, setup.cadence)
            self.replay = ReplayBuffer(setup.replay_capacity)
            self.smdp = SmdpTracker(setup.agent.q.gamma, setup.smdp_key)
            self.q = setup.agent.q

        self.stagger: StaggerState | None = None
        if setup.mode.staggered:
            self.stagger = self._make_stagger()

        self.registration_times: list = []
        self.tau_hat: list = []
        self.scheduler_rows: list = []
        self.learner_rows: list = []
        self.checkpoints: list = []
        self._checkpoints = set(setup.checkpoints)
        self.warm_tick = int(setup.horizon_ticks * setup.warmup_fraction)
        self.warm: dict | None = None
        self.done = False
        self._jobs: dict = {}
        self.clock: Any = None

        factory = {
            "sequential": self._sequential,
            "flipped_sequential": self._sequential,
            "one_step_lag": self._one_step_lag,
            "staggered_max": self._staggered,
            "staggered_expected": self._staggered,
            "chunked": self._chunked,
        }[setup.mode.kind]
        self.procs = {pid: factory(pid) for pid in range(1, setup.n_inference + 1)}
        if self.warm_tick == 0:
            self.warm = self._counters(Duration(0))

    # ---------------------------------------------------------------- setup

    def _make_stagger(self) -> StaggerState:
        s = self.setup
        lat = s.tau_theta
        top, mean = lat.max(), lat.mean()
        if s.mode.kind == "staggered_max":
            # spread by the worst case; the mean would bunch phases under a bimodal prior
            prior = top if top is not None else mean
        else:
            prior = mean
        eps = prior if s.epsilon_spread == "auto" else as_duration(s.epsilon_spread)
        st = StaggerState(s.n_inference, epsilon_spread=eps, negative_branch=s.negative_branch)
        if s.warm_start:
            if s.mode.kind == "staggered_max":
                st.tau_hat_max = prior
            else:
                st.a_tot, st.tau_tot = 1, mean
        return st

    def rho_star_k(self, k: int) -> float:
        if k not in self._rho_k:
            self._rho_k[k] = delayed_oracle(self.spec, k, solution=self.solution, seed=self.setup.seed).rate
        return self._rho_k[k]

    def now(self):
        # a run can fail before its clock exists; report time zero then
        return self.clock.now() if self.clock is not None else Duration(0)

    def observe(self) -> tuple[int, int]:
        with self._env_lock:
            return self.env.observe()

    def _counters(self, now) -> dict:
        lg = self.ledger
        return {
            "time": now,
            "ticks": lg.ticks,
            "beta_steps": lg.beta_steps,
            "components": lg.components,
            "total_reward": lg.total_reward,
            "registered": self.mailbox.registered,
            "overwritten": self.mailbox.overwritten,
            "triggers": self.learner.triggers if self.learner else 0,
            "applied": len(self.learner.applied) if self.learner else 0,
        }

    # ------------------------------------------------------------- actions

    def _register(self, pid, action, obs, tau, slept):
        now = self.now()
        displaced = self.mailbox.register(action, now, pid, decision_state=obs[0], decision_step=obs[1])
        self.registration_times.append(now)
        if self.setup.log_scheduler:
            self.scheduler_rows.append((now, pid, tau, slept, 1, int(displaced), self._tau_hat_value()))

    def _tau_hat_value(self):
        st = self.stagger
        if st is None:
            return ""
        return st.tau_hat_max if self.setup.mode.kind == "staggered_max" else st.tau_hat_bar

    def _act(self, pid, s):
        s_ = self.setup
        return self.setup.agent.act(s, self.proc_rngs[pid], s_.tau_theta, s_.tau_theta_fast)

    # ------------------------------------------------------------ learning

    def _start_learn(self, now):
        got = self.learner.trigger()
        if got is None:
            return None
        idx, ticket = got
        snap = self.q.snapshot()
        batch = self.replay.sample(self.rng_learn, self.learner.batch_size)
        delta = td_update(snap, batch) if batch else UpdateDelta([], snap.version)
        return idx, ticket, delta, len(batch), now

    def _finish_learn(self, job, now):
        idx, ticket, delta, n, started = job
        self.learner.release(idx)
        before = len(self.learner.staleness)
        self.learner.apply_in_order(self.q, delta, ticket)
        if self.setup.log_learner:
            stale = self.learner.staleness[-1] if len(self.learner.staleness) > before else ""
            self.learner_rows.append((now, ticket, stale, n, now - started))

    def _learn_inline(self):
        dur = self.setup.tau_l.sample(self.rng_learn)
        job = self._start_learn(self.now()) if self.learning else None
        if dur > 0:
            yield dur
        if job is not None:
            self._finish_learn(job, self.now())

    # ----------------------------------------------------------- processes

    def _sequential(self, pid):
        flip = self.setup.mode.flip_order
        while True:
            obs = self.observe()
            if not flip:
                yield from self._learn_inline()
            a, tau = self._act(pid, obs[0])
            if tau > 0:
                yield tau
            self._register(pid, a, obs, tau, 0)
            if flip:
                yield from self._learn_inline()
            while self.mailbox.pending:
                yield NEXT_TICK

    def _one_step_lag(self, pid):
        while True:
            obs = self.observe()
            a, tau = self._act(pid, obs[0])
            if tau > 0:
                yield tau
            yield NEXT_TICK
            self._register(pid, a, obs, tau, 0)

    def _staggered(self, pid):
        st = self.stagger
        complete = on_complete_max if self.setup.mode.kind == "staggered_max" else on_complete_expected
        while True:
            elapsed = Duration(0)
            d = st.take_delay(pid)
            if d > 0:
                yield d
                elapsed += d
            obs = self.observe()
            a, tau = self._act(pid, obs[0])
            if tau > 0:
                yield tau
                elapsed += tau
            directive = complete(st, pid, tau)
            if directive.delay_increments or not self.tau_hat:
                self.tau_hat.append((self.now(), float(self._tau_hat_value())))
            if directive.self_sleep > 0:
                yield directive.self_sleep
                elapsed += directive.self_sleep
            self._register(pid, a, obs, tau, d + directive.self_sleep)
            if elapsed == 0:
                # nothing can change before the next tick; avoid a zero-time livelock
                yield NEXT_TICK

    def _chunked(self, pid):
        k = self.setup.mode.k
        rng = self.proc_rngs[pid]
        while True:
            obs = self.observe()
            actions = self.setup.agent.act_chunk(obs[0], k, rng)
            tau = chunk_latency(self.setup.tau_theta.sample(rng), k, self.setup.chunk_cost)
            if tau > 0:
                yield tau
            now = self.now()
            dropped = self.mailbox.register_chunk(actions, now, pid, decision_state=obs[0], decision_step=obs[1])
            self.registration_times.append(now)
            if self.setup.log_scheduler:
                self.scheduler_rows.append((now, pid, tau, 0, len(actions), dropped, ""))
            if tau == 0:
                yield NEXT_TICK

    # ---------------------------------------------------------------- ticks

    def _commit(self, now):
        with self._env_lock:
            rec = self.env.tick(self.mailbox, self.rng_env, now)
        k = rec.staleness
        self.ledger.record(rec, self.rho_star, self.rho_star_k(k) if k is not None else None)
        ticks = self.ledger.ticks
        if self.learning:
            tr = self.smdp.push(rec)
            if tr is not None:
                self.replay.add(tr)
        if ticks in self._checkpoints:
            self.checkpoints.append((ticks, now, self.ledger.total_regret))
        if ticks == self.warm_tick:
            self.warm = self._counters(now)
        if ticks >= self.setup.horizon_ticks:
            self.done = True
        return rec

    def _learn_due(self) -> bool:
        return (
            self.learning
            and self.setup.mode.kind not in ("sequential", "flipped_sequential")
            and self.ledger.ticks % self.learner.cadence == 0
        )

    def _first_tick(self, mode: str) -> Duration:
        off = self.setup.tick_offset
        if off is None:
            off = self.setup.tau_m.mean() / 2 if mode == "wallclock" else Duration(0)
        return as_duration(off) + self.setup.tau_m.sample(self.rng_tick)

    # -------------------------------------------------------------- virtual

    def run_virtual(self) -> SimResult:
        q = EventQueue()
        self.clock = VirtualClock(q)
        self.tick_waiters: list = []
        trace: list = []
        for pid in self.procs:
            q.schedule(Event(EventKind.PROCESS_WAKE, pid), 0)
        q.schedule(Event(EventKind.ENV_TICK, "due"), self._first_tick("virtual"))
        keep = self.setup.keep_trace
        while not self.done:
            at, seq, ev = q.pop()
            if keep:
                trace.append((at, seq, ev))
            if ev.kind is EventKind.PROCESS_WAKE:
                self._advance(ev.payload)
            elif ev.kind is EventKind.ENV_TICK:
                if ev.payload == "due" and q.pending_at(at):
                    q.schedule(Event(EventKind.ENV_TICK, "deferred"), at)
                    continue
                self._commit(at)
                if self._learn_due():
                    self._trigger_async(q, at)
                waiters, self.tick_waiters = self.tick_waiters, []
                for pid in waiters:
                    self._advance(pid)
                if not self.done:
                    q.schedule(Event(EventKind.ENV_TICK, "due"), at + self.setup.tau_m.sample(self.rng_tick))
            else:
                self._finish_learn(self._jobs.pop(ev.payload), at)
        return self._result(trace, [], "virtual")

    def _advance(self, pid):
        req = next(self.procs[pid])
        if req is NEXT_TICK:
            self.tick_waiters.append(pid)
        else:
            self.clock.request_wake(pid, req)

    def _trigger_async(self, q, now):
        job = self._start_learn(now)
        if job is None:
            return
        dur = self.setup.tau_l.sample(self.rng_learn)
        if dur == 0:
            self._finish_learn(job, now)
            return
        self._jobs[job[1]] = job
        q.schedule(Event(EventKind.LEARNER_APPLY, job[1]), now + dur)

    # ------------------------------------------------------------ wallclock

    def run_wallclock(self) -> SimResult:
        clock = WallClock()
        self.clock = clock
        stop = threading.Event()
        tick_cv = threading.Condition()
        tick_count = [0]
        errors: list = []

        def guarded(fn):
            def body(*args):
                try:
                    fn(*args)
                except Exception as exc:  # surfaced after join
                    errors.append(exc)
                    stop.set()
            return body

        def proc_main(pid):
            gen = self.procs[pid]
            deadline = 0.0
            while not stop.is_set():
                req = next(gen)
                if req is NEXT_TICK:
                    with tick_cv:
                        seen = tick_count[0]
                        tick_cv.wait_for(lambda: tick_count[0] > seen or stop.is_set())
                    deadline = clock.now()
                else:
                    deadline += float(req)
                    clock.sleep_until(deadline)

        inboxes = {}

        def learner_main(idx):
            box = inboxes[idx]
            while True:
                item = box.get()
                if item is None:
                    return
                job, dur = item
                clock.sleep_until(float(job[4]) + float(dur))
                self._finish_learn(job, clock.now())

        threads = [threading.Thread(target=guarded(proc_main), args=(pid,), daemon=True) for pid in self.procs]
        if self.learner is not None:
            for idx in range(self.learner.n_learn):
                inboxes[idx] = queue_mod.Queue()
                threads.append(threading.Thread(target=guarded(learner_main), args=(idx,), daemon=True))
        for t in threads:
            t.start()

        deadline = float(self._first_tick("wallclock"))
        while not self.done and not stop.is_set():
            clock.sleep_until(deadline)
            now = clock.now()
            self._commit(now)
            if self._learn_due():
                job = self._start_learn(now)
                if job is not None:
                    inboxes[job[0]].put((job, self.setup.tau_l.sample(self.rng_learn)))
            with tick_cv:
                tick_count[0] += 1
                tick_cv.notify_all()
            deadline += float(self.setup.tau_m.sample(self.rng_tick))

        stop.set()
        with tick_cv:
            tick_cv.notify_all()
        for box in inboxes.values():
            box.put(None)
        for t in threads:
            t.join(timeout=5.0)
        if errors:
            raise errors[0]
        return self._result([], list(clock.jitter), "wallclock")

    # --------------------------------------------------------------- result

    def _result(self, trace, jitter, mode) -> SimResult:
        final = self._counters(self.now())
        return SimResult(
            ledger=self.ledger,
            rho_star=self.rho_star,
            rho_star_k=dict(self._rho_k),
            warm=self.warm if self.warm is not None else final,
            final=final,
            registration_times=self.registration_times,
            tau_hat=self.tau_hat,
            learner=self.learner,
            checkpoints=self.checkpoints,
            scheduler_rows=self.scheduler_rows,
            learner_rows=self.learner_rows,
            trace=trace,
            jitter=jitter,
            clock_mode=mode,
            tau_hat_final=self._tau_hat_value() if self.stagger else None,
        )


def simulate(setup: RunSetup, clock: str = "virtual") -> SimResult:
    sim = Simulation(setup)
    if clock == "virtual":
        return sim.run_virtual()
    if clock == "wallclock":
        return sim.run_wallclock()
    raise ValueError(f"unknown clock mode {clock!r}")


def horizon_for_seconds(seconds: float, tau_m: LatencyModel) -> int:
    return max(1, math.ceil(as_duration(seconds) / tau_m.mean()))
