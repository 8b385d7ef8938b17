"""Exact event-driven simulation of the open ASEP under a time-dilated generator.

The chain runs with generator D * L_{N,t} where D = N (hyperbolic scale) or
N^(1+a) (quasi-static scale).  Swaps across bonds with equal occupations are
identities and carry rate zero in the table; this changes the event count but
not the law of the process.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from . import _kernels as kern
from .core_model import ConfigError, LatticeConfig, RateSchedule, ScalingPlan
from .observables import GridField

DEFAULT_BUDGET = 2_000_000_000
DEFAULT_SAMPLES = 200


class BudgetExceeded(RuntimeError):
    """The event budget ran out; ``partial`` holds the record gathered so far."""

    def __init__(self, message: str, partial: "TrajectoryRecord | None" = None):
        super().__init__(message)
        self.partial = partial


class AbsorbingState(RuntimeError):
    pass


def replica_seed(master_seed: int, *key: int) -> int:
    """64-bit seed for the task identified by ``key`` (e.g. lattice size, replica)."""
    ss = np.random.SeedSequence([int(master_seed) & (2 ** 64 - 1), *(int(k) for k in key)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def hydrodynamic_dilation(N: int) -> float:
    return float(N)


def quasi_static_dilation(N: int, a: float) -> float:
    if a <= 0:
        raise ConfigError("quasi-static exponent a must be positive")
    return float(N) ** (1.0 + a)


class EventRateTable:
    """Sum-tree over the N+1 event rates: left reservoir, N-1 bonds, right reservoir."""

    def __init__(self, eta: np.ndarray, D: float, plan: ScalingPlan,
                 rates: tuple[float, float, float, float]):
        self.N = int(eta.size)
        self.tree, self.P = kern.new_tree(self.N)
        self.D = float(D)
        self.plan = plan
        self.set_boundary_rates(eta, rates, rebuild=True)

    def set_boundary_rates(self, eta: np.ndarray, rates: tuple[float, float, float, float],
                           rebuild: bool = False) -> None:
        self.rates = tuple(float(r) for r in rates)
        a, b, g, d = self.rates
        pl = self.plan
        if rebuild:
            kern.fill_tree(self.tree, self.P, eta, self.D, pl.p, pl.sigma, pl.sigma_tilde,
                           a, b, g, d)
        else:
            kern.tree_set(self.tree, self.P, 0, kern.left_rate(eta, self.D, pl.sigma_tilde, a, g))
            kern.tree_set(self.tree, self.P, self.N,
                          kern.right_rate(eta, self.D, pl.sigma_tilde, b, d))

    def rebuild(self, eta: np.ndarray) -> None:
        self.set_boundary_rates(eta, self.rates, rebuild=True)

    @property
    def entries(self) -> np.ndarray:
        return self.tree[self.P:self.P + self.N + 1].copy()

    @property
    def bond_rates(self) -> np.ndarray:
        return self.entries[1:self.N]

    @property
    def left_flip_rate(self) -> float:
        return float(self.tree[self.P])

    @property
    def right_flip_rate(self) -> float:
        return float(self.tree[self.P + self.N])

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def sample(self, u: float) -> int:
        """Leaf index selected by u uniform in [0, 1)."""
        return int(kern.tree_find(self.tree, self.P, u * self.total))


@dataclass
class CountingState:
    """h_plus[i], h_minus[i] for i = 0..N: jumps across bond (i, i+1), boundary moves at 0/N."""

    h_plus: np.ndarray
    h_minus: np.ndarray

    @classmethod
    def zeros(cls, N: int) -> "CountingState":
        return cls(np.zeros(N + 1, dtype=np.int64), np.zeros(N + 1, dtype=np.int64))

    @property
    def h(self) -> np.ndarray:
        return self.h_plus - self.h_minus


@dataclass
class SimClock:
    t: float
    time_dilation: float
    rng_seed: int
    rng: np.random.Generator = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.rng is None:
            self.rng = np.random.default_rng(self.rng_seed)

    @classmethod
    def start(cls, seed: int, time_dilation: float) -> "SimClock":
        return cls(0.0, float(time_dilation), int(seed))


class Event(NamedTuple):
    kind: str  # "create", "annihilate", "jump", "breakpoint", "stop"
    index: int  # bond i for jumps (1..N-1), site for boundary flips, -1 otherwise
    t: float


@dataclass
class TrajectoryRecord:
    """Observables of one replica at the sampling times.

    ``occupation`` holds cumulative occupation times int_0^t eta_i(s) ds, so
    exact time averages over [t_a, t_b] are differences of rows.
    """

    times: np.ndarray
    eta: np.ndarray
    h_plus: np.ndarray
    h_minus: np.ndarray
    occupation: np.ndarray
    seed: int
    plan: ScalingPlan
    schedule: RateSchedule
    time_dilation: float
    n_events: int = 0
    complete: bool = True
    stops: np.ndarray | None = None  # rows (t, occ_1, occ_N) at every internal stop
    extra: dict[str, list[Any]] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return int(self.eta.shape[1])

    @property
    def h(self) -> np.ndarray:
        return self.h_plus - self.h_minus

    def time_averaged_density(self, t_start: float = 0.0) -> np.ndarray:
        k0 = int(np.searchsorted(self.times, t_start - 1e-12))
        span = self.times[-1] - self.times[k0]
        if span <= 0:
            return self.eta[-1].astype(np.float64)
        return (self.occupation[-1] - self.occupation[k0]) / span

    def boundary_deviation_integral(self, side: str = "right") -> float:
        """int_0^T (beta+delta)(eta_N - rho_+) dt, or (alpha+gamma)(eta_1 - rho_-) on the left."""
        assert self.stops is not None
        col = 2 if side == "right" else 1
        total = 0.0
        for r0, r1 in zip(self.stops[:-1], self.stops[1:]):
            t0, t1 = r0[0], r1[0]
            if t1 <= t0:
                continue
            a, b, g, d = self.schedule.rates(t0)
            occ = r1[col] - r0[col]
            if side == "right":
                total += (b + d) * occ - d * (t1 - t0)
            else:
                total += (a + g) * occ - a * (t1 - t0)
        return total


Observer = Callable[["Simulation"], Any]


class Simulation:
    """Mutable state machine for one replica."""

    def __init__(self, config: LatticeConfig, schedule: RateSchedule, plan: ScalingPlan,
                 clock: SimClock):
        if config.size != plan.N:
            raise ConfigError(f"configuration has {config.size} sites, plan expects N={plan.N}")
        self.schedule = schedule
        self.plan = plan
        self.clock = clock
        self.eta = config.occupations.astype(np.int8).copy()
        self.eta0 = self.eta.copy()
        self.counting = CountingState.zeros(plan.N)
        self.occ = np.zeros(plan.N)
        self.last = np.full(plan.N, clock.t)
        self.table = EventRateTable(self.eta, clock.time_dilation, plan, schedule.rates(clock.t))
        self.n_events = 0

    @property
    def t(self) -> float:
        return self.clock.t

    @property
    def config(self) -> LatticeConfig:
        return LatticeConfig(self.eta.copy())

    def occupation_now(self) -> np.ndarray:
        return self.occ + self.eta * (self.clock.t - self.last)

    def _run_kernel(self, t_stop: float, budget: int) -> tuple[int, int]:
        a, b, g, d = self.table.rates
        pl = self.plan
        t, n, status, leaf = kern.advance(
            self.eta, self.table.tree, self.table.P, self.clock.rng, self.clock.t, t_stop,
            self.table.D, pl.p, pl.sigma, pl.sigma_tilde, a, b, g, d,
            self.counting.h_plus, self.counting.h_minus, self.occ, self.last, budget)
        self.clock.t = t
        self.n_events += n
        return status, leaf

    def _cross(self, t: float) -> None:
        # boundary rates change at a breakpoint; bond rates do not
        self.table.set_boundary_rates(self.eta, self.schedule.rates(t))

    def step(self, t_limit: float = math.inf) -> Event:
        """Fire one event, or stop at the next breakpoint / ``t_limit`` without firing."""
        nb = self.schedule.next_breakpoint(self.clock.t)
        t_stop = min(nb, t_limit, self.schedule.t_max)
        before = self.eta.copy()
        status, leaf = self._run_kernel(t_stop, 1)
        if status == kern.STATUS_ABSORBING:
            raise AbsorbingState("total event rate is zero")
        if status == kern.STATUS_STOP:
            if self.clock.t == nb:
                self._cross(nb)
                return Event("breakpoint", -1, self.clock.t)
            return Event("stop", -1, self.clock.t)
        N = self.plan.N
        if leaf == 0:
            return Event("create" if before[0] == 0 else "annihilate", 1, self.clock.t)
        if leaf == N:
            return Event("create" if before[N - 1] == 0 else "annihilate", N, self.clock.t)
        return Event("jump", leaf, self.clock.t)

    def advance_to(self, t_target: float, budget: int = DEFAULT_BUDGET,
                   on_stop: Callable[[], None] | None = None) -> int:
        """Run until ``t_target``; returns the number of events fired."""
        if not self.schedule.covers(t_target):
            raise ConfigError(f"schedule does not cover t={t_target}")
        start = self.n_events
        while self.clock.t < t_target:
            nb = self.schedule.next_breakpoint(self.clock.t)
            status, _ = self._run_kernel(min(nb, t_target), budget - (self.n_events - start))
            if status == kern.STATUS_ABSORBING:
                raise AbsorbingState("total event rate is zero")
            if status == kern.STATUS_BUDGET:
                raise BudgetExceeded(f"event budget {budget} exhausted at t={self.clock.t}")
            if self.clock.t == nb:
                self._cross(nb)
            if on_stop is not None:
                on_stop()
        return self.n_events - start

    def rebuild_table(self) -> None:
        self.table.rebuild(self.eta)


def default_sample_times(T: float, n_samples: int = DEFAULT_SAMPLES) -> np.ndarray:
    if T <= 0:
        return np.zeros(1)
    return np.linspace(0.0, T, n_samples + 1)


def run(config: LatticeConfig, schedule: RateSchedule, plan: ScalingPlan, clock: SimClock,
        T: float, sample_times: Sequence[float] | None = None,
        observers: Sequence[Observer] = (), budget: int = DEFAULT_BUDGET) -> TrajectoryRecord:
    """Simulate on [0, T], recording observables at the sampling times.

    Raises BudgetExceeded (with ``partial`` set) if more than ``budget`` events fire.
    """
    if T < 0:
        raise ConfigError("horizon must be nonnegative")
    if not schedule.covers(T):
        raise ConfigError(f"schedule covers [0, {schedule.t_max}], horizon is {T}")
    times = default_sample_times(T) if sample_times is None else np.asarray(sample_times, float)
    if times.size == 0 or times[0] != clock.t or np.any(np.diff(times) <= 0) or times[-1] > T:
        raise ConfigError("sampling times must start at the clock time, increase, and end by T")
    sim = Simulation(config, schedule, plan, clock)
    S, N = times.size, plan.N
    eta = np.zeros((S, N), dtype=np.int8)
    hp = np.zeros((S, N + 1), dtype=np.int64)
    hm = np.zeros((S, N + 1), dtype=np.int64)
    occ = np.zeros((S, N))
    stops: list[tuple[float, float, float]] = []
    extra: dict[str, list[Any]] = {f"observer_{k}": [] for k in range(len(observers))}

    def snap(k: int) -> None:
        eta[k] = sim.eta
        hp[k] = sim.counting.h_plus
        hm[k] = sim.counting.h_minus
        occ[k] = sim.occupation_now()
        for j, obs in enumerate(observers):
            extra[f"observer_{j}"].append(obs(sim))

    def mark() -> None:
        o = sim.occupation_now()
        stops.append((sim.clock.t, o[0], o[-1]))

    def record(n: int, complete: bool) -> TrajectoryRecord:
        return TrajectoryRecord(times[:n].copy(), eta[:n], hp[:n], hm[:n], occ[:n],
                                clock.rng_seed, plan, schedule, clock.time_dilation,
                                sim.n_events, complete, np.array(stops).reshape(-1, 3), extra)

    mark()
    snap(0)
    for k in range(1, S):
        try:
            sim.advance_to(times[k], budget - sim.n_events, on_stop=mark)
        except BudgetExceeded as exc:
            raise BudgetExceeded(str(exc), record(k, False)) from None
        snap(k)
    if times[-1] < T:
        try:
            sim.advance_to(T, budget - sim.n_events, on_stop=mark)
        except BudgetExceeded as exc:
            raise BudgetExceeded(str(exc), record(S, False)) from None
    return record(S, True)


def sample_initial(u0: GridField | float | Callable[[np.ndarray], np.ndarray], N: int,
                   rng: np.random.Generator) -> LatticeConfig:
    """Independent Bernoulli occupations with P(eta_i = 1) = u0 at the centre of cell i."""
    x = (np.arange(N) + 0.5) / N
    if isinstance(u0, GridField):
        prob = u0(x)
    elif callable(u0):
        prob = np.asarray(u0(x), dtype=np.float64)
    else:
        prob = np.full(N, float(u0))
    if np.any(prob < 0) or np.any(prob > 1):
        raise ConfigError("initial profile must take values in [0, 1]")
    return LatticeConfig((rng.random(N) < prob).astype(np.int8))


def run_replica(initial: GridField | float | Callable[[np.ndarray], np.ndarray],
                schedule: RateSchedule, plan: ScalingPlan, T: float, seed: int,
                time_dilation: float | None = None, sample_times: Sequence[float] | None = None,
                budget: int = DEFAULT_BUDGET) -> TrajectoryRecord:
    """Sample the initial configuration and the dynamics from one seeded stream."""
    D = hydrodynamic_dilation(plan.N) if time_dilation is None else time_dilation
    clock = SimClock.start(seed, D)
    config = sample_initial(initial, plan.N, clock.rng)
    return run(config, schedule, plan, clock, T, sample_times, budget=budget)


def run_ensemble(initial: GridField | float | Callable[[np.ndarray], np.ndarray],
                 schedule: RateSchedule, plan: ScalingPlan, T: float, replicas: int,
                 master_seed: int, key: Sequence[int] = (), time_dilation: float | None = None,
                 sample_times: Sequence[float] | None = None, threads: int = 1,
                 budget: int = DEFAULT_BUDGET) -> list[TrajectoryRecord]:
    """Independent replicas, returned in replica order regardless of scheduling."""
    seeds = [replica_seed(master_seed, *key, r) for r in range(replicas)]

    def task(seed: int) -> TrajectoryRecord:
        return run_replica(initial, schedule, plan, T, seed, time_dilation, sample_times, budget)

    if threads <= 1:
        return [task(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(task, seeds))
