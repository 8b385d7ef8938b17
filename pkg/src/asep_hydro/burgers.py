"""Entropy solutions of u_t + p (u(1-u))_x = 0 on [0, 1] with boundary data rho_-(t), rho_+(t).

First-order Godunov finite volumes.  Ghost cells carry the reservoir densities,
which realises the Bardos-LeRoux-Nedelec boundary condition: the boundary flux
is the Godunov flux between the datum and the adjacent cell, so boundary layers
form wherever the datum is not an admissible trace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .core_model import ConfigError, RateSchedule, reservoir_densities
from .observables import GridField, SpaceTimeField

U_STAR = 0.5


class CFLViolation(ValueError):
    pass


@dataclass
class FluxFn:
    """p J(u) with J(u) = u(1-u); counts clamped out-of-range inputs."""

    p: float = 1.0
    clamped: int = field(default=0, compare=False)

    def J(self, u):
        return u * (1.0 - u)

    def dJ(self, u):
        return 1.0 - 2.0 * u

    def __call__(self, u):
        return self.p * self.J(u)

    @property
    def max_speed(self) -> float:
        return self.p


def godunov_flux(u_left, u_right, flux: FluxFn | None = None):
    """Godunov flux for the concave flux p u(1-u).

    min of pJ over [u_l, u_r] if u_l <= u_r, max over [u_r, u_l] otherwise.
    Works elementwise on arrays.
    """
    flux = flux or FluxFn()
    ul = np.asarray(u_left, dtype=np.float64)
    ur = np.asarray(u_right, dtype=np.float64)
    bad = int(np.count_nonzero((ul < 0) | (ul > 1)) + np.count_nonzero((ur < 0) | (ur > 1)))
    if bad:
        flux.clamped += bad
        ul = np.clip(ul, 0.0, 1.0)
        ur = np.clip(ur, 0.0, 1.0)
    Jl, Jr = flux.J(ul), flux.J(ur)
    fan_peak = (ul >= U_STAR) & (ur <= U_STAR)
    F = np.where(ul <= ur, np.minimum(Jl, Jr), np.where(fan_peak, 0.25, np.maximum(Jl, Jr)))
    F = flux.p * F
    return F if F.ndim else float(F)


@dataclass(frozen=True)
class SolverState:
    u: np.ndarray
    t: float
    schedule: RateSchedule
    p: float = 1.0
    cfl: float = 0.9
    inflow: float = 0.0   # int F_{1/2} dt
    outflow: float = 0.0  # int F_{M+1/2} dt

    def __post_init__(self) -> None:
        if not 0 < self.cfl <= 1:
            raise ConfigError("Courant number must lie in (0, 1]")

    @property
    def M(self) -> int:
        return int(self.u.size)

    @property
    def dx(self) -> float:
        return 1.0 / self.M

    @property
    def dt_max(self) -> float:
        return self.cfl * self.dx / self.p

    @property
    def field(self) -> GridField:
        return GridField(self.u)

    def mass(self) -> float:
        return float(self.u.sum() * self.dx)


def _fluxes(u: np.ndarray, rho_minus: float, rho_plus: float, flux: FluxFn) -> np.ndarray:
    ext = np.concatenate([[rho_minus], u, [rho_plus]])
    return godunov_flux(ext[:-1], ext[1:], flux)


def advance(state: SolverState, dt: float) -> SolverState:
    """One explicit conservative step; boundary data are frozen at the start of the step."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt > state.dt_max * (1 + 1e-12):
        raise CFLViolation(f"dt={dt} exceeds the CFL bound {state.dt_max}")
    rm, rp = reservoir_densities(state.schedule, state.t)
    F = _fluxes(state.u, rm, rp, FluxFn(state.p))
    u = state.u - dt / state.dx * (F[1:] - F[:-1])
    return replace(state, u=u, t=state.t + dt, inflow=state.inflow + dt * F[0],
                   outflow=state.outflow + dt * F[-1])


def _initial_values(u0: GridField | float | Sequence[float], M: int) -> np.ndarray:
    if isinstance(u0, GridField):
        return u0.resample(M).values.copy()
    if np.isscalar(u0):
        return np.full(M, float(u0))
    return GridField(np.asarray(u0, dtype=np.float64)).resample(M).values.copy()


def solve(u0: GridField | float, schedule: RateSchedule, T: float, M: int = 400, p: float = 1.0,
          cfl: float = 0.9, sample_times: Iterable[float] | None = None,
          every_step: bool = False, return_state: bool = False):
    """Integrate to time T, returning the solution sampled at ``sample_times``.

    Steps use dt = cfl dx / p, shortened to land on schedule breakpoints and
    sampling times.  With ``every_step`` every time level is recorded (used for
    space-time quadrature).
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if not schedule.covers(T):
        raise ConfigError(f"schedule does not cover [0, {T}]")
    u = _initial_values(u0, M)
    if np.any(u < -1e-12) or np.any(u > 1 + 1e-12):
        raise ConfigError("initial data must lie in [0, 1]")
    samples = np.asarray(sorted(set([0.0, T] if sample_times is None else sample_times)), float)
    if samples.size and (samples[0] < 0 or samples[-1] > T):
        raise ValueError("sampling times must lie in [0, T]")
    stops = sorted(set(samples.tolist()) | set(schedule.breakpoints_in(0.0, T)) | {T})
    state = SolverState(u, 0.0, schedule, p, cfl)
    times, frames = [], []
    want = set(samples.tolist())

    def keep(s: SolverState, force: bool = False) -> None:
        if every_step or force:
            if times and times[-1] == s.t:
                return
            times.append(s.t)
            frames.append(s.u.copy())

    keep(state, 0.0 in want)
    for target in stops:
        while state.t < target:
            state = advance(state, min(state.dt_max, target - state.t))
            if target - state.t <= 1e-12 * max(1.0, target):
                state = replace(state, t=target)
            keep(state, state.t in want)
    out = SpaceTimeField(np.array(times), np.array(frames).reshape(len(times), M))
    return (out, state) if return_state else out


# -- analytic Riemann solutions ---------------------------------------------

def riemann_profile(u_left: float, u_right: float, t: float, x, p: float = 1.0,
                    x0: float = 0.5) -> np.ndarray:
    """Point values of the entropy solution of the Riemann problem on the line."""
    x = np.asarray(x, dtype=np.float64)
    if t <= 0 or u_left == u_right:
        return np.where(x < x0, u_left, u_right)
    if u_left < u_right:
        s = p * (1.0 - u_left - u_right)
        return np.where(x < x0 + s * t, u_left, u_right)
    xi = (x - x0) / t
    fan = 0.5 * (1.0 - xi / p)
    return np.clip(fan, u_right, u_left)


def _antiderivative(u_left: float, u_right: float, t: float, x: np.ndarray, p: float,
                    x0: float) -> np.ndarray:
    """int_0^x of the Riemann solution, in closed form."""
    if t <= 0 or u_left == u_right:
        xs = np.clip(x0, 0.0, 1.0)
        return u_left * np.minimum(x, xs) + u_right * np.maximum(0.0, x - xs)
    if u_left < u_right:
        xs = np.clip(x0 + p * (1.0 - u_left - u_right) * t, 0.0, 1.0)
        return u_left * np.minimum(x, xs) + u_right * np.maximum(0.0, x - xs)
    a = x0 + p * (1.0 - 2.0 * u_left) * t
    b = x0 + p * (1.0 - 2.0 * u_right) * t

    def G(y):
        return 0.5 * y - (y - x0) ** 2 / (4.0 * p * t)

    left = np.clip(np.minimum(x, a), 0.0, None)
    lo = np.minimum(max(a, 0.0), x)
    hi = np.minimum(max(b, 0.0), x)
    right = np.maximum(0.0, x - max(b, 0.0))
    return u_left * left + (G(hi) - G(lo)) + u_right * right


def riemann_exact(u_left: float, u_right: float, t: float, M: int = 400, p: float = 1.0,
                  x0: float = 0.5) -> GridField:
    """Exact cell averages of the Riemann solution on M cells of [0, 1]."""
    edges = np.linspace(0.0, 1.0, M + 1)
    U = _antiderivative(u_left, u_right, t, edges, p, x0)
    return GridField(np.diff(U) * M)


# -- quasi-stationary profile -----------------------------------------------

LOW_DENSITY = "low-density"
HIGH_DENSITY = "high-density"
MAX_CURRENT = "max-current"
CRITICAL_LINE = "critical-line"


@dataclass(frozen=True)
class PhasePoint:
    rho_minus: float
    rho_plus: float
    phase: str
    u_bar: float | None
    current: float


def quasi_stationary_profile(rho_minus: float, rho_plus: float, p: float = 1.0,
                             critical_tol: float = 1e-12) -> PhasePoint:
    """Spatially constant quasi-stationary density and its current p J(u_bar).

    On the critical line (rho_- < 1/2, rho_- + rho_+ = 1) the limit is a randomly
    located shock: u_bar is left unset and the current is p J(rho_-).
    """
    for r in (rho_minus, rho_plus):
        if not 0.0 <= r <= 1.0 or math.isnan(r):
            raise ConfigError(f"boundary density {r} outside [0, 1]")
    rm, rp = float(rho_minus), float(rho_plus)
    if rm < 0.5 and abs(rm + rp - 1.0) <= critical_tol:
        return PhasePoint(rm, rp, CRITICAL_LINE, None, p * rm * (1 - rm))
    if rm < 0.5 and rm < 1.0 - rp:
        phase, u = LOW_DENSITY, rm
    elif rp > 0.5 and rp > 1.0 - rm:
        phase, u = HIGH_DENSITY, rp
    else:
        phase, u = MAX_CURRENT, 0.5
    return PhasePoint(rm, rp, phase, u, p * u * (1 - u))


def phase_diagram(rho_minus: Sequence[float], rho_plus: Sequence[float],
                  p: float = 1.0) -> list[PhasePoint]:
    return [quasi_stationary_profile(a, b, p) for a in rho_minus for b in rho_plus]
