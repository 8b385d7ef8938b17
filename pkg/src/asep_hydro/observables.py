"""Microscopic functionals of configurations and trajectories.

Grid convention: a field with M cells lives on [0, 1] split into equal cells
[(m-1)/M, m/M), m = 1..M.  For the particle system M = N and site i owns cell
i, i.e. the two half-width end cells of the indicator partition centred at i/N
are merged into their neighbours, so that the integral of the empirical
density is exactly (sum of eta)/N.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .core_model import ConfigError, LatticeConfig, RateSchedule, ScalingPlan, reservoir_densities


@dataclass(frozen=True)
class GridField:
    """Cell averages of a function on [0, 1] over M equal cells."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("a GridField needs a 1-d array with at least one cell")
        object.__setattr__(self, "values", v)

    @property
    def M(self) -> int:
        return int(self.values.size)

    @property
    def dx(self) -> float:
        return 1.0 / self.M

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.M + 1)

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) / self.M

    def integral(self) -> float:
        return float(self.values.sum() / self.M)

    def __call__(self, x: np.ndarray | float) -> np.ndarray:
        """Point evaluation of the piecewise-constant field (right-continuous)."""
        idx = np.clip(np.floor(np.asarray(x) * self.M).astype(np.int64), 0, self.M - 1)
        return self.values[idx]

    def resample(self, M: int) -> "GridField":
        """Exact cell-average projection onto M equal cells."""
        if M == self.M:
            return self
        cum = np.concatenate([[0.0], np.cumsum(self.values)]) / self.M
        x = np.linspace(0.0, 1.0, M + 1)
        # antiderivative of a piecewise-constant function, evaluated exactly
        pos = x * self.M
        k = np.clip(np.floor(pos).astype(np.int64), 0, self.M - 1)
        F = cum[k] + (pos - k) / self.M * self.values[k]
        return GridField(np.diff(F) * M)


@dataclass(frozen=True)
class SpaceTimeField:
    """A GridField sampled at increasing times; values has shape (S, M)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or t.ndim != 1 or v.shape[0] != t.size:
            raise ValueError("values must have shape (len(times), M)")
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise ValueError("times must be nondecreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def M(self) -> int:
        return int(self.values.shape[1])

    @property
    def dx(self) -> float:
        return 1.0 / self.M

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) / self.M

    def at(self, k: int) -> GridField:
        return GridField(self.values[k])

    def index_of(self, t: float, atol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > atol:
            raise KeyError(f"time {t} not sampled")
        return k

    def __len__(self) -> int:
        return int(self.times.size)


def _merged_edges(Ma: int, Mb: int, lo: float, hi: float) -> np.ndarray:
    e = np.concatenate([np.linspace(0, 1, Ma + 1), np.linspace(0, 1, Mb + 1), [lo, hi]])
    e = np.unique(np.clip(e, lo, hi))
    return e


def _aligned(a: GridField, b: GridField, lo: float, hi: float):
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError("need 0 <= lo < hi <= 1")
    e = _merged_edges(a.M, b.M, lo, hi)
    mid = 0.5 * (e[1:] + e[:-1])
    return np.diff(e), a(mid), b(mid)


def l1_distance(a: GridField, b: GridField, lo: float = 0.0, hi: float = 1.0) -> float:
    """Integral of |a - b| over [lo, hi], exact for piecewise-constant fields."""
    w, va, vb = _aligned(a, b, lo, hi)
    return float(np.sum(w * np.abs(va - vb)))


def l2_distance(a: GridField, b: GridField, lo: float = 0.0, hi: float = 1.0) -> float:
    w, va, vb = _aligned(a, b, lo, hi)
    return float(np.sqrt(np.sum(w * (va - vb) ** 2)))


# -- snapshots ---------------------------------------------------------------

def _eta(config: LatticeConfig | np.ndarray) -> np.ndarray:
    if isinstance(config, LatticeConfig):
        return config.occupations
    return np.asarray(config)


def empirical_density(config: LatticeConfig | np.ndarray) -> GridField:
    return GridField(_eta(config).astype(np.float64))


@dataclass(frozen=True)
class BlockAverages:
    """Block averages of one configuration; arrays are indexed from i = K (1-based).

    bar[i-K]         uniform average over sites i-K+1..i,        i = K..N
    hat[i-K]         triangular-weight average over i-K+1..i+K-1, i = K..N-K+1
    hat_current[i-K] same weights applied to eta_j (1 - eta_{j+1}), i = K..N-K
    """

    K: int
    bar: np.ndarray
    hat: np.ndarray
    hat_current: np.ndarray

    def hat_at(self, i: int) -> float:
        return float(self.hat[..., i - self.K])


def triangular_weights(K: int) -> np.ndarray:
    """w_{i'} = (K - |i'|)/K^2 for i' = -K+1..K-1."""
    ip = np.arange(-K + 1, K)
    return (K - np.abs(ip)) / K ** 2


def _box(x: np.ndarray, K: int) -> np.ndarray:
    """Sums of K consecutive entries along the last axis (length n-K+1)."""
    c = np.cumsum(x, axis=-1)
    pad = np.zeros(x.shape[:-1] + (1,), dtype=c.dtype)
    c = np.concatenate([pad, c], axis=-1)
    return c[..., K:] - c[..., :-K]


def _check_K(N: int, K: int) -> None:
    if not 1 <= K or 2 * K >= N:
        raise ConfigError(f"block size K={K} requires 1 <= K < N/2 (N={N})")


def smoothed_numerators(eta: np.ndarray, K: int) -> np.ndarray:
    """Integer K^2 * hat_{i,K} for i = K..N-K+1 (exact arithmetic)."""
    eta = np.asarray(eta, dtype=np.int64)
    _check_K(eta.shape[-1], K)
    return _box(_box(eta, K), K)


def block_averages(config: LatticeConfig | np.ndarray, K: int) -> BlockAverages:
    """Block averages of a configuration, or of a stack of shape (S, N)."""
    eta = _eta(config)
    N = eta.shape[-1]
    _check_K(N, K)
    e = eta.astype(np.int64)
    kbar = _box(e, K)
    bar = kbar / K
    hat = _box(kbar, K) / K ** 2
    J = e[..., :-1] * (1 - e[..., 1:])
    hat_current = _box(_box(J, K), K) / K ** 2
    return BlockAverages(K, bar, hat, hat_current)


def smoothed_density(eta: np.ndarray, K: int) -> np.ndarray:
    """rho_N on all N cells: hat_{i,K} on i = K+1..N-K, nearest value outside.

    Works on a single configuration or a stack (S, N).
    """
    eta = np.asarray(eta)
    N = eta.shape[-1]
    hat = block_averages(eta, K).hat
    inner = hat[..., 1:N - 2 * K + 1]  # i = K+1..N-K
    left = np.repeat(inner[..., :1], K, axis=-1)
    right = np.repeat(inner[..., -1:], K, axis=-1)
    return np.concatenate([left, inner, right], axis=-1)


def comparison_window(N: int, K: int) -> tuple[float, float]:
    """x-range of the cells i = K+1..N-K on which rho_N is defined."""
    return K / N, (N - K) / N


def microscopic_currents(config: LatticeConfig | np.ndarray, schedule: RateSchedule,
                         plan: ScalingPlan, t: float) -> np.ndarray:
    """Instantaneous currents j_{i,i+1}, i = 0..N (array of length N+1)."""
    eta = _eta(config).astype(np.float64)
    a, b, g, d = schedule.rates(t)
    j = np.empty(eta.size + 1)
    j[0] = plan.sigma_tilde * (a - (a + g) * eta[0])
    j[1:-1] = plan.p * eta[:-1] * (1 - eta[1:]) + plan.sigma * (eta[:-1] - eta[1:])
    j[-1] = plan.sigma_tilde * ((b + d) * eta[-1] - d)
    return j


# -- trajectory diagnostics --------------------------------------------------

def _records(traj: Any) -> list[Any]:
    if hasattr(traj, "eta") and hasattr(traj, "times"):
        return [traj]
    return list(traj)


def _time_average(times: np.ndarray, values: np.ndarray) -> float:
    if times.size == 1 or times[-1] == times[0]:
        return float(np.mean(values))
    return float(np.trapezoid(values, times) / (times[-1] - times[0]))


def _window(rec: Any, t_min: float) -> tuple[np.ndarray, np.ndarray]:
    keep = rec.times >= t_min
    return rec.times[keep], rec.eta[keep]


def one_block_residual(traj: Any, K: int, t_min: float = 0.0) -> float:
    """Time-averaged mean over i = K..N-K of (hat J_i - J(hat eta_i))^2.

    ``traj`` is a trajectory record (anything with ``times`` and ``eta`` of shape
    (S, N)) or a sequence of them; the ensemble mean is returned.
    """
    vals = []
    for rec in _records(traj):
        times, eta = _window(rec, t_min)
        ba = block_averages(eta, K)
        hat = ba.hat[..., :-1]
        r = np.mean((ba.hat_current - hat * (1 - hat)) ** 2, axis=-1)
        vals.append(_time_average(times, r))
    return float(np.mean(vals))


def h1_residual(traj: Any, K: int, t_min: float = 0.0) -> float:
    """Time-averaged mean over i = K..N-K of (hat eta_{i+1} - hat eta_i)^2."""
    vals = []
    for rec in _records(traj):
        times, eta = _window(rec, t_min)
        hat = block_averages(eta, K).hat
        r = np.mean(np.diff(hat, axis=-1) ** 2, axis=-1)
        vals.append(_time_average(times, r))
    return float(np.mean(vals))


def boundary_block_residual(traj: Any, K: int, schedule: RateSchedule | None = None,
                            t_min: float = 0.0) -> tuple[float, float]:
    """Time-averaged (hat eta_K - rho_-(t))^2 and (hat eta_{N-K} - rho_+(t))^2."""
    left, right = [], []
    for rec in _records(traj):
        sched = schedule if schedule is not None else rec.schedule
        times, eta = _window(rec, t_min)
        N = eta.shape[-1]
        hat = block_averages(eta, K).hat
        rho = np.array([reservoir_densities(sched, t) for t in times]).reshape(-1, 2)
        left.append(_time_average(times, (hat[..., 0] - rho[:, 0]) ** 2))
        right.append(_time_average(times, (hat[..., N - 2 * K] - rho[:, 1]) ** 2))
    return float(np.mean(left)), float(np.mean(right))


def field_rows(field: GridField, t: float | None = None) -> Iterable[Sequence[float]]:
    if t is None:
        return zip(field.centers, field.values)
    return ((t, x, v) for x, v in zip(field.centers, field.values))
