"""Discrete-event simulation of EDCA broadcast among the moving vehicles.

Time is kept in integer nanoseconds so event ordering is exact and runs are
bit-reproducible.  Every vehicle runs two access categories with their own
FIFO queue and backoff state; the channel seen by vehicle ``v`` is busy when
any vehicle in range of ``v`` (itself included) is transmitting.

Access rules, per access category:

* a packet reaching the head of its queue draws a backoff counter uniformly
  from ``[0, W - 1]``; a zero counter transmits at once if the channel is idle;
* each backoff slot begins with a channel check: idle lets the slot run and
  decrements the counter at its end (reaching zero transmits), busy freezes the
  counter until the channel has been idle for the category's AIFS;
* if AC1 finishes its backoff while the same vehicle's AC0 is on air the
  internal collision sends AC1 to its next retry stage (dropping after the
  retry limit); AC0 finishing while AC1 is on air defers its transmission.

Broadcasts are not acknowledged, so nothing is retransmitted after an
external collision.  A receiver gets a frame iff no other transmission from
a vehicle in the receiver's range overlaps it and the receiver itself is
silent throughout.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import connectivity, kinematics
from .config import EdcaParams, FrameParams, ScenarioConfig
from .edca import transmission_time

NS = 1_000_000_000

# event kinds; the tuple order also breaks ties at equal time
_STEP, _ARRIVAL, _TX_END, _SLOT_END, _AIFS_END = range(5)

# per-AC phases
_IDLE, _BACKOFF, _WAIT, _AIFS, _TX = range(5)

_BLOCK = 4096


def _ns(seconds: float) -> int:
    return int(round(seconds * NS))


class _Stream:
    """Buffered uniform(0, 1) draws from one independent generator."""

    __slots__ = ("_gen", "_buf", "_i")

    def __init__(self, seed: int, key: tuple[int, ...]):
        self._gen = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
        self._buf = self._gen.random(_BLOCK)
        self._i = 0

    def uniform(self) -> float:
        if self._i == _BLOCK:
            self._buf = self._gen.random(_BLOCK)
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return float(u)

    def integer(self, n: int) -> int:
        return min(int(self.uniform() * n), n - 1)

    def exponential(self, rate: float) -> float:
        return -math.log1p(-self.uniform()) / rate


# stream purposes
_P_ARRIVAL, _P_BACKOFF, _P_PHASE = range(3)


class _Ac:
    __slots__ = ("queue", "phase", "counter", "retry", "token", "hol",
                 "tx_start", "backoff_rng", "arrival_rng")

    def __init__(self, backoff_rng: _Stream, arrival_rng: _Stream):
        self.queue: deque[int] = deque()
        self.phase = _IDLE
        self.counter = 0
        self.retry = 0
        self.token = 0
        self.hol = 0
        self.tx_start = -1
        self.backoff_rng = backoff_rng
        self.arrival_rng = arrival_rng


@dataclass
class _TargetTx:
    ok: np.ndarray
    n_recv: int


@dataclass
class SimCounters:
    """Whole-network packet accounting per access category."""

    arrived: list[int] = field(default_factory=lambda: [0, 0])
    delivered: list[int] = field(default_factory=lambda: [0, 0])
    dropped: list[int] = field(default_factory=lambda: [0, 0])
    pending: list[int] = field(default_factory=lambda: [0, 0])
    internal_collisions: int = 0
    transmissions: list[int] = field(default_factory=lambda: [0, 0])

    def conserved(self) -> bool:
        return all(self.arrived[q] == self.delivered[q] + self.dropped[q] + self.pending[q]
                   for q in (0, 1))


@dataclass
class SimRecord:
    """Raw per-packet observations of the target vehicle plus per-step context.

    Per-packet arrays are indexed by finished packet; ``step`` is the index of
    the analysis step in which the packet finished.
    """

    t: np.ndarray
    n_tr: np.ndarray
    dt: float
    window: float
    seed: int
    packets: dict[int, dict[str, np.ndarray]]
    senses: np.ndarray  # [step, ac, (total, busy)]
    tx_count: np.ndarray  # [step, ac]
    arrivals: np.ndarray  # [step, ac]
    counters: SimCounters
    velocities: np.ndarray | None = None


class _Simulator:
    def __init__(self, config: ScenarioConfig, seed: int, duration: float):
        self.cfg = config
        self.seed = seed
        e: EdcaParams = config.edca
        self.edca = e
        self.n = config.n_vehicles
        self.target = config.target_index
        self.slot = _ns(e.slot_time)
        self.t_tr = _ns(transmission_time(config.frame))
        self.aifs = (_ns(e.aifs(0)), _ns(e.aifs(1)))
        self.dt = _ns(config.dt)
        self.t0 = _ns(config.t_start)
        self.n_steps = int(round(duration / config.dt))
        self.t_end = self.t0 + self.n_steps * self.dt
        self.sched = (config.lambda0, config.lambda1)

        self.state = kinematics.initial_state(config)
        self.h = connectivity.build_matrix(self.state.x, self.state.y,
                                           config.transmission_range).astype(np.int64)
        self.on_air = np.zeros(self.n, dtype=np.int64)
        self.busy = np.zeros(self.n, dtype=np.int64)
        self.macs = [[_Ac(_Stream(seed, (v, q, _P_BACKOFF)), _Stream(seed, (v, q, _P_ARRIVAL)))
                      for q in (0, 1)] for v in range(self.n)]
        self.active: dict[int, int] = {}  # sender -> ac on air
        self.target_tx: _TargetTx | None = None
        self.heap: list[tuple] = []
        self.seq = 0
        self.counters = SimCounters()

        steps = self.n_steps + 1
        self.t_grid = config.t_start + np.arange(steps) * config.dt
        self.n_tr = np.zeros(steps, dtype=np.int64)
        self.n_tr[0] = int(self.h[self.target].sum())
        self.velocities = np.empty((steps, self.n))
        self.velocities[0] = self.state.v
        self.senses = np.zeros((steps, 2, 2), dtype=np.int64)
        self.tx_count = np.zeros((steps, 2), dtype=np.int64)
        self.arrival_bins = np.zeros((steps, 2), dtype=np.int64)
        self.step = 0
        self.pk = {q: {k: [] for k in ("arrival", "hol", "done", "delivered", "n_recv", "n_ok")}
                   for q in (0, 1)}

    # -- event plumbing -------------------------------------------------
    def push(self, t: int, v: int, q: int, kind: int, token: int = 0) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, v, q, kind, self.seq, token))

    def next_arrival(self, v: int, q: int, t: int, first: bool = False) -> None:
        """Schedule the next arrival after ``t`` under the rate in force at ``t``."""
        sec = t / NS
        rate = self.sched[q].at(sec)
        change = next((s for s, _ in self.sched[q].steps if s > sec + 1e-12), None)
        ac = self.macs[v][q]
        if rate <= 0:
            if change is not None:
                self.push(_ns(change), v, q, _ARRIVAL, -1)
            return
        if q == 0:
            gap = ac.arrival_rng.exponential(rate)
        elif first:
            # phase of the periodic beacon source within its period
            if self.cfg.ac1_phase == "random":
                frac = _Stream(self.seed, (v, q, _P_PHASE)).uniform()
            else:
                frac = v / self.n
            gap = frac / rate
        else:
            gap = 1.0 / rate
        t_next = t + _ns(gap)
        if change is not None and t_next >= _ns(change):
            self.push(_ns(change), v, q, _ARRIVAL, -1)
        else:
            self.push(t_next, v, q, _ARRIVAL, 0)

    # -- MAC behaviour ----------------------------------------------------
    def window(self, q: int, retry: int) -> int:
        return self.edca.w0 if q == 0 else self.edca.w1(retry)

    def start_contention(self, v: int, q: int, t: int) -> None:
        ac = self.macs[v][q]
        ac.counter = ac.backoff_rng.integer(self.window(q, ac.retry))
        if ac.counter == 0:
            if self.busy[v] == 0:
                self.attempt(v, q, t)
            else:
                self.freeze(v, q)
        else:
            self.slot_start(v, q, t)

    def slot_start(self, v: int, q: int, t: int) -> None:
        ac = self.macs[v][q]
        if v == self.target:
            self.senses[self.step, q, 0] += 1
        if self.busy[v] > 0:
            if v == self.target:
                self.senses[self.step, q, 1] += 1
            self.freeze(v, q)
            return
        ac.phase = _BACKOFF
        ac.token += 1
        self.push(t + self.slot, v, q, _SLOT_END, ac.token)

    def freeze(self, v: int, q: int) -> None:
        ac = self.macs[v][q]
        ac.phase = _WAIT
        ac.token += 1

    def start_aifs(self, v: int, q: int, t: int) -> None:
        ac = self.macs[v][q]
        ac.phase = _AIFS
        ac.token += 1
        self.push(t + self.aifs[q], v, q, _AIFS_END, ac.token)

    def resume(self, v: int, q: int, t: int) -> None:
        """Channel has been idle for AIFS."""
        if self.macs[v][q].counter == 0:
            self.attempt(v, q, t)
        else:
            self.slot_start(v, q, t)

    def attempt(self, v: int, q: int, t: int) -> None:
        ac = self.macs[v][q]
        other = self.macs[v][1 - q]
        if other.phase == _TX:
            if q == 1:
                # internal collision: AC0 keeps the air, AC1 backs off again
                self.counters.internal_collisions += 1
                ac.retry += 1
                if ac.retry > self.edca.retry_limit:
                    self.finish(v, q, t, delivered=False)
                else:
                    self.start_contention(v, q, t)
            else:
                self.freeze(v, q)
            return
        self.transmit(v, q, t)

    def transmit(self, v: int, q: int, t: int) -> None:
        ac = self.macs[v][q]
        ac.phase = _TX
        ac.token += 1
        ac.tx_start = t
        self.counters.transmissions[q] += 1
        if v == self.target:
            self.tx_count[self.step, q] += 1
        row = self.h[v].astype(bool)
        tt = self.target_tx
        if tt is not None:
            tt.ok &= ~row
        if v == self.target:
            ok = row.copy()
            ok[v] = False
            n_recv = int(ok.sum())
            for s in self.active:
                ok &= ~self.h[s].astype(bool)
            self.target_tx = _TargetTx(ok, n_recv)
        self.active[v] = q
        self.on_air[v] = 1
        self.raise_busy(np.flatnonzero(row), t)
        self.push(t + self.t_tr, v, q, _TX_END, ac.token)

    def raise_busy(self, idx: np.ndarray, t: int) -> None:
        was_idle = idx[self.busy[idx] == 0]
        self.busy[idx] += 1
        for u in was_idle.tolist():
            for q in (0, 1):
                if self.macs[u][q].phase == _AIFS:
                    self.freeze(u, q)

    def lower_busy(self, idx: np.ndarray, t: int) -> None:
        self.busy[idx] -= 1
        now_idle = idx[self.busy[idx] == 0]
        for u in now_idle.tolist():
            for q in (0, 1):
                if self.macs[u][q].phase == _WAIT:
                    self.start_aifs(u, q, t)

    def tx_end(self, v: int, q: int, t: int) -> None:
        del self.active[v]
        self.on_air[v] = 0
        n_recv = n_ok = 0
        if v == self.target:
            n_recv, n_ok = self.target_tx.n_recv, int(self.target_tx.ok.sum())
            self.target_tx = None
        self.macs[v][q].phase = _IDLE
        self.finish(v, q, t, delivered=True, n_recv=n_recv, n_ok=n_ok)
        # the channel release can restart this vehicle's other AC, so it comes last
        self.lower_busy(np.flatnonzero(self.h[v]), t)

    def finish(self, v: int, q: int, t: int, delivered: bool, n_recv: int = -1,
               n_ok: int = 0) -> None:
        ac = self.macs[v][q]
        arrival = ac.queue.popleft()
        if delivered:
            self.counters.delivered[q] += 1
        else:
            self.counters.dropped[q] += 1
        if v == self.target:
            if n_recv < 0:
                n_recv = int(self.h[v].sum()) - 1
            rec = self.pk[q]
            rec["arrival"].append(arrival)
            rec["hol"].append(ac.hol)
            rec["done"].append(t)
            rec["delivered"].append(delivered)
            rec["n_recv"].append(n_recv)
            rec["n_ok"].append(n_ok)
        ac.retry = 0
        ac.phase = _IDLE
        ac.token += 1
        if ac.queue:
            ac.hol = t
            self.start_contention(v, q, t)

    def arrive(self, v: int, q: int, t: int) -> None:
        ac = self.macs[v][q]
        self.counters.arrived[q] += 1
        if v == self.target:
            self.arrival_bins[self.step, q] += 1
        ac.queue.append(t)
        if len(ac.queue) == 1:
            ac.hol = t
            self.start_contention(v, q, t)

    # -- mobility -----------------------------------------------------------
    def advance_motion(self, t: int) -> None:
        self.step += 1
        self.state = kinematics.step_scenario(self.state, self.cfg)
        h = connectivity.build_matrix(self.state.x, self.state.y,
                                      self.cfg.transmission_range).astype(np.int64)
        self.velocities[self.step] = self.state.v
        self.n_tr[self.step] = int(h[self.target].sum())
        if not np.array_equal(h, self.h):
            self.h = h
            busy = h @ self.on_air
            rose = np.flatnonzero((busy > 0) & (self.busy == 0))
            fell = np.flatnonzero((busy == 0) & (self.busy > 0))
            self.busy = busy
            for u in rose.tolist():
                for q in (0, 1):
                    if self.macs[u][q].phase == _AIFS:
                        self.freeze(u, q)
            for u in fell.tolist():
                for q in (0, 1):
                    if self.macs[u][q].phase == _WAIT:
                        self.start_aifs(u, q, t)

    # -- main loop ------------------------------------------------------------
    def run(self) -> SimRecord:
        for v in range(self.n):
            for q in (0, 1):
                self.next_arrival(v, q, self.t0, first=True)
        for k in range(1, self.n_steps + 1):
            self.push(self.t0 + k * self.dt, -1, -1, _STEP)
        heap = self.heap
        pop = heapq.heappop
        while heap:
            t, v, q, kind, _, token = pop(heap)
            if t > self.t_end:
                break
            if kind == _STEP:
                self.advance_motion(t)
                continue
            ac = self.macs[v][q]
            if kind == _ARRIVAL:
                if token == 0 and t < self.t_end:
                    self.arrive(v, q, t)
                self.next_arrival(v, q, t)
            elif token != ac.token:
                continue  # superseded timer
            elif kind == _SLOT_END:
                ac.counter -= 1
                if ac.counter == 0:
                    self.attempt(v, q, t)
                else:
                    self.slot_start(v, q, t)
            elif kind == _AIFS_END:
                self.resume(v, q, t)
            elif kind == _TX_END:
                self.tx_end(v, q, t)

        for v in range(self.n):
            for q in (0, 1):
                self.counters.pending[q] += len(self.macs[v][q].queue)
        packets = {}
        for q in (0, 1):
            rec = self.pk[q]
            done = np.asarray(rec["done"], dtype=np.int64)
            packets[q] = {
                "arrival": np.asarray(rec["arrival"], dtype=np.int64) / NS,
                "hol": np.asarray(rec["hol"], dtype=np.int64) / NS,
                "done": done / NS,
                "delivered": np.asarray(rec["delivered"], dtype=bool),
                "n_recv": np.asarray(rec["n_recv"], dtype=np.int64),
                "n_ok": np.asarray(rec["n_ok"], dtype=np.int64),
                # finishing at a step boundary belongs to the step that starts there
                "step": np.minimum((done - self.t0) // self.dt, self.n_steps).astype(np.int64),
            }
        return SimRecord(self.t_grid, self.n_tr, self.cfg.dt, self.cfg.sim_window, self.seed,
                         packets, self.senses, self.tx_count, self.arrival_bins,
                         self.counters, self.velocities)


def simulate_raw(config: ScenarioConfig, seed: int = 0,
                 duration: float | None = None) -> SimRecord:
    """Run the event simulation and return the raw per-packet record."""
    if duration is None:
        duration = config.t_end - config.t_start
    if duration <= 0:
        raise ValueError("duration must be > 0")
    return _Simulator(config, seed, duration).run()


def simulate(config: ScenarioConfig, seed: int = 0, duration: float | None = None,
             window: float | None = None):
    """Simulate and reduce to a windowed :class:`~platoon_edca.pipeline.TimeSeries`."""
    from .pipeline import windowed_series

    record = simulate_raw(config, seed, duration)
    return windowed_series([record], config, window)


@dataclass(frozen=True)
class ServiceSample:
    mean: float
    variance: float
    mean_se: float
    variance_se: float
    n: int


def empirical_service_sampler(ps: float, sigma0: float, params: EdcaParams, frame: FrameParams,
                              q: int, samples: int = 1_000_000, seed: int = 0) -> ServiceSample:
    """Monte-Carlo service times of the slot-level backoff automaton.

    Each backoff slot is independently frozen with probability ``ps`` (costing
    a frame time plus AIFS instead of a slot).  For AC1 every completed
    backoff loses an internal collision with probability ``sigma0`` and moves
    to the next retry stage; losing after the last stage drops the packet.
    """
    if samples < 100_000:
        raise ValueError("need at least 1e5 samples")
    rng = np.random.default_rng(seed)
    t_tr = transmission_time(frame)
    slot, busy_slot = params.slot_time, t_tr + params.aifs(q)

    def backoff(window: int, n: int) -> np.ndarray:
        k = rng.integers(0, window, n)
        b = rng.binomial(k, ps)
        return (k - b) * slot + b * busy_slot

    if q == 0:
        times = t_tr + backoff(params.w0, samples)
    else:
        times = np.zeros(samples)
        alive = np.ones(samples, dtype=bool)
        for r in range(params.retry_limit + 1):
            idx = np.flatnonzero(alive)
            times[idx] += backoff(params.w1(r), idx.size)
            won = rng.random(idx.size) >= sigma0
            times[idx[won]] += t_tr
            alive[idx[won]] = False
    mean = float(times.mean())
    centred = times - mean
    var = float(np.mean(centred ** 2))
    m4 = float(np.mean(centred ** 4))
    return ServiceSample(mean, var, math.sqrt(var / samples),
                         math.sqrt(max(m4 - var * var, 0.0) / samples), samples)
