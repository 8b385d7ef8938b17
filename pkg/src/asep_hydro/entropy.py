"""Entropy pairs, Otto boundary-entropy checks, and the auxiliary boundary weight.

Conventions: an entropy pair (f, q) for the flux J(u) = u(1-u) satisfies
q' = (1 - 2u) f'; the drift p multiplies q wherever the equation's flux
appears, exactly as it multiplies J in u_t + p J(u)_x = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .core_model import RateSchedule, reservoir_densities
from .observables import GridField, SpaceTimeField

Fn = Callable[[np.ndarray], np.ndarray]
Fn2 = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ContractError(ValueError):
    """A test function does not satisfy the flags an operation requires."""


@dataclass(frozen=True)
class LaxPair:
    f: Fn
    q: Fn
    df: Fn | None = None
    convex: bool = True
    name: str = "pair"

    @classmethod
    def identity(cls) -> "LaxPair":
        return cls(lambda u: np.asarray(u, float), lambda u: u * (1 - u),
                   lambda u: np.ones_like(np.asarray(u, float)), True, "u")

    @classmethod
    def quadratic(cls) -> "LaxPair":
        return cls(lambda u: 0.5 * u ** 2, lambda u: 0.5 * u ** 2 - 2.0 * u ** 3 / 3.0,
                   lambda u: np.asarray(u, float), True, "u^2/2")

    @classmethod
    def from_entropy(cls, f: Fn, df: Fn, convex: bool = True, name: str = "f") -> "LaxPair":
        """Build q(u) = int_0^u (1-2v) f'(v) dv by adaptive quadrature."""

        def q_scalar(u: float) -> float:
            return integrate.quad(lambda v: (1 - 2 * v) * float(df(v)), 0.0, float(u),
                                  epsabs=1e-13, epsrel=1e-12)[0]

        q_vec = np.vectorize(q_scalar, otypes=[float])
        return cls(f, q_vec, df, convex, name)


class BoundaryEntropyPair:
    """(F, Q)(u, w) with F(w,w) = Q(w,w) = d_u F(w,w) = 0 and (F, Q)(., w) a Lax pair."""

    name = "boundary-pair"

    def F(self, u, w):
        raise NotImplementedError

    def Q(self, u, w):
        raise NotImplementedError

    def dF(self, u, w):
        raise NotImplementedError

    def at(self, h: float) -> LaxPair:
        return LaxPair(lambda u: self.F(u, h), lambda u: self.Q(u, h),
                       lambda u: self.dF(u, h), True, f"{self.name}(h={h})")


@dataclass(frozen=True)
class SmoothedKruzkov(BoundaryEntropyPair):
    """F(u, w) = sqrt((u-w)^2 + d^2) - d, a C^2 convex approximation of |u - w|.

    Q(u, w) = int_w^u (1-2v) d_v F(v, w) dv in closed form:
    with s = u - w and R = sqrt(s^2 + d^2),
        Q = (1 - 2w)(R - d) - s R + d^2 asinh(s / d).
    """

    delta: float = 1e-3
    name: str = field(default="smoothed-kruzkov", compare=False)

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ValueError("smoothing parameter must be positive")

    def F(self, u, w):
        s = np.asarray(u, float) - w
        return np.hypot(s, self.delta) - self.delta

    def dF(self, u, w):
        s = np.asarray(u, float) - w
        return s / np.hypot(s, self.delta)

    def d2F(self, u, w):
        s = np.asarray(u, float) - w
        return self.delta ** 2 / np.hypot(s, self.delta) ** 3

    def Q(self, u, w):
        d = self.delta
        s = np.asarray(u, float) - w
        R = np.hypot(s, d)
        return (1.0 - 2.0 * w) * (R - d) - s * R + d * d * np.arcsinh(s / d)


# -- test functions ----------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """psi(t, x) with analytic partial derivatives and declared support flags."""

    psi: Fn2
    psi_t: Fn2
    psi_x: Fn2
    compact_x: bool = False
    compact_t: bool = False
    vanishes_at_T: bool = False
    T: float | None = None
    name: str = "psi"

    __test__ = False  # not a pytest class

    def sample(self, times: np.ndarray, x: np.ndarray):
        tt, xx = np.meshgrid(times, x, indexing="ij")
        return self.psi(tt, xx), self.psi_t(tt, xx), self.psi_x(tt, xx)

    def verify(self, times: np.ndarray, tol: float = 1e-12) -> None:
        xs = np.linspace(0.0, 1.0, 201)
        vals = self.psi(*np.meshgrid(times, xs, indexing="ij"))
        if np.any(vals < -tol):
            raise ContractError(f"{self.name} takes negative values")
        if self.compact_x:
            edge = self.psi(times, np.zeros_like(times)), self.psi(times, np.ones_like(times))
            if max(np.max(np.abs(e)) for e in edge) > tol:
                raise ContractError(f"{self.name} does not vanish at x = 0, 1")
        if self.vanishes_at_T or self.compact_t:
            if np.max(np.abs(self.psi(np.full_like(xs, times[-1]), xs))) > tol:
                raise ContractError(f"{self.name} does not vanish at the final time")
        if self.compact_t and np.max(np.abs(self.psi(np.full_like(xs, times[0]), xs))) > tol:
            raise ContractError(f"{self.name} does not vanish at the initial time")


def _mollifier(s):
    s = np.asarray(s, float)
    inside = np.abs(s) < 1
    out = np.zeros_like(s)
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _mollifier_d(s):
    s = np.asarray(s, float)
    inside = np.abs(s) < 1
    out = np.zeros_like(s)
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si ** 2)) * (-2.0 * si / (1.0 - si ** 2) ** 2)
    return out


def bump(t0: float, t1: float, x0: float, x1: float) -> TestFunction:
    """Smooth nonnegative bump supported in (t0, t1) x (x0, x1)."""
    tc, tr = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
    xc, xr = 0.5 * (x0 + x1), 0.5 * (x1 - x0)

    def psi(t, x):
        return _mollifier((t - tc) / tr) * _mollifier((x - xc) / xr)

    def psi_t(t, x):
        return _mollifier_d((t - tc) / tr) / tr * _mollifier((x - xc) / xr)

    def psi_x(t, x):
        return _mollifier((t - tc) / tr) * _mollifier_d((x - xc) / xr) / xr

    return TestFunction(psi, psi_t, psi_x, compact_x=0 < x0 and x1 < 1,
                        compact_t=True, vanishes_at_T=True, T=t1, name="bump")


def decaying_profile(T: float, g: Fn, dg: Fn, name: str = "decaying") -> TestFunction:
    """psi = (1 - t/T) g(x); nonnegative when g is, zero at t = T, free at x = 0, 1."""

    def psi(t, x):
        return (1.0 - t / T) * g(x)

    def psi_t(t, x):
        return -g(x) / T * np.ones_like(t)

    def psi_x(t, x):
        return (1.0 - t / T) * dg(x)

    return TestFunction(psi, psi_t, psi_x, vanishes_at_T=True, T=T, name=name)


def otto_test_functions(T: float) -> list[TestFunction]:
    """Three nonnegative test functions vanishing at T, weighting the boundaries differently."""
    w = 0.2
    return [
        decaying_profile(T, lambda x: np.ones_like(x), lambda x: np.zeros_like(x), "uniform"),
        decaying_profile(T, lambda x: np.exp(-((x - 0.5) / w) ** 2),
                         lambda x: -2 * (x - 0.5) / w ** 2 * np.exp(-((x - 0.5) / w) ** 2),
                         "gaussian"),
        decaying_profile(T, lambda x: 1.5 - x, lambda x: -np.ones_like(x), "left-heavy"),
    ]


# -- quadrature --------------------------------------------------------------

def _space_time_integral(times: np.ndarray, integrand: np.ndarray, dx: float) -> float:
    # midpoint rule over cells, trapezoid over sampled times
    per_time = integrand.sum(axis=1) * dx
    if times.size == 1:
        return 0.0
    return float(np.trapezoid(per_time, times))


def entropy_production(field: SpaceTimeField, pair: LaxPair, psi: TestFunction,
                       p: float = 1.0) -> float:
    """X = -iint f(u) psi_t - p iint q(u) psi_x for psi compactly supported in (0,T) x (0,1)."""
    if not (psi.compact_x and psi.compact_t):
        raise ContractError("entropy production needs psi compactly supported in space and time")
    psi.verify(field.times)
    _, pt, px = psi.sample(field.times, field.centers)
    u = field.values
    integrand = -pair.f(u) * pt - p * pair.q(u) * px
    return _space_time_integral(field.times, integrand, field.dx)


def otto_integral_inequality(field: SpaceTimeField, pair: BoundaryEntropyPair, h: float,
                             psi: TestFunction, u0: GridField | float, schedule: RateSchedule,
                             p: float = 1.0) -> tuple[float, float]:
    """Both sides of the integral form of the boundary entropy condition.

    lhs = -iint F(u,h) psi_t - p iint Q(u,h) psi_x
    rhs = int F(u0,h) psi(0,.) + p int F(rho_-,h) psi(.,0) + p int F(rho_+,h) psi(.,1)
    Entropy solutions satisfy lhs <= rhs.
    """
    if not psi.vanishes_at_T:
        raise ContractError("psi must vanish at the final time")
    times = field.times
    psi.verify(times)
    x = field.centers
    _, pt, px = psi.sample(times, x)
    u = field.values
    lhs = _space_time_integral(times, -pair.F(u, h) * pt - p * pair.Q(u, h) * px, field.dx)

    u0v = u0.resample(field.M).values if isinstance(u0, GridField) else np.full(field.M, u0)
    init = float(np.sum(pair.F(u0v, h) * psi.psi(np.zeros_like(x), x)) * field.dx)
    rho = np.array([reservoir_densities(schedule, t) for t in times])
    left = pair.F(rho[:, 0], h) * psi.psi(times, np.zeros_like(times))
    right = pair.F(rho[:, 1], h) * psi.psi(times, np.ones_like(times))
    bnd = float(np.trapezoid(left + right, times)) if times.size > 1 else 0.0
    return lhs, init + p * bnd


def otto_boundary_check(field: SpaceTimeField, pair: BoundaryEntropyPair,
                        schedule: RateSchedule, side: str, r: float,
                        phi: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """int Q(u(t, r), rho_-(t)) phi dt (left) or int Q(u(t, 1-r), rho_+(t)) phi dt (right).

    Admissible boundary behaviour gives a value <= 0 on the left and >= 0 on
    the right; the raw value is returned.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    times = field.times
    k = min(int(math.floor(r / field.dx + 1e-9)), field.M - 1)
    col = k if side == "left" else field.M - 1 - k
    trace = field.values[:, col]
    rho = np.array([reservoir_densities(schedule, t) for t in times])
    w = rho[:, 0] if side == "left" else rho[:, 1]
    weight = np.ones_like(times) if phi is None else np.asarray(phi(times), float)
    if np.any(weight < 0):
        raise ContractError("phi must be nonnegative")
    vals = pair.Q(trace, w) * weight
    return float(np.trapezoid(vals, times)) if times.size > 1 else 0.0


# -- auxiliary boundary weight -----------------------------------------------

@dataclass(frozen=True)
class AuxiliaryWeight:
    """Two-branch weight vanishing at x = 0, 1 and rising to ~1 over O(sigma/N) layers.

    alpha(x) = 1 - (sigma/(sigma+1))^(N x)        on [0, delta_N]
    alpha(x) = 1 - ((sigma-1)/sigma)^(N (1-x))    on (delta_N, 1]
    """

    N: int
    sigma: float

    def __post_init__(self) -> None:
        if not self.sigma > 1:
            raise ValueError("the weight needs sigma > 1")

    @property
    def delta_N(self) -> float:
        s = self.sigma
        return (math.log(s) - math.log(s - 1)) / (math.log(s + 1) - math.log(s - 1))

    @property
    def _rate_left(self) -> float:
        return self.N * math.log1p(1.0 / self.sigma)  # -N log(sigma/(sigma+1))

    @property
    def _rate_right(self) -> float:
        return -self.N * math.log1p(-1.0 / self.sigma)  # -N log((sigma-1)/sigma)

    def __call__(self, x):
        x = np.asarray(x, float)
        left = -np.expm1(-self._rate_left * x)
        right = -np.expm1(-self._rate_right * (1.0 - x))
        return np.where(x <= self.delta_N, left, right)

    def derivative(self, x):
        """One-sided derivative; at the kink the left branch is reported."""
        x = np.asarray(x, float)
        left = self._rate_left * np.exp(-self._rate_left * x)
        right = -self._rate_right * np.exp(-self._rate_right * (1.0 - x))
        return np.where(x <= self.delta_N, left, right)

    def log_complement(self, x):
        """log(1 - alpha(x)); finite everywhere, so alpha < 1 even where it rounds to 1.0."""
        x = np.asarray(x, float)
        return np.where(x <= self.delta_N, -self._rate_left * x, -self._rate_right * (1.0 - x))

    def peak(self) -> float:
        return float(self(self.delta_N))

    def total_variation(self) -> float:
        """int |alpha'| from the branch antiderivatives: rise on [0, delta], fall on [delta, 1]."""
        d = self.delta_N
        rise = -math.expm1(-self._rate_left * d)
        fall = -math.expm1(-self._rate_right * (1.0 - d))
        return rise + fall

    def min_on(self, a: float, b: float, n: int = 10_001) -> float:
        return float(np.min(self(np.linspace(a, b, n))))


def auxiliary_weight_eval(w: AuxiliaryWeight, x):
    return w(x)


def auxiliary_weight_properties(w: AuxiliaryWeight, n_grid: int = 10_000) -> dict[str, object]:
    """Checks of the weight's properties on an n_grid-point grid plus exact integrals."""
    x = np.linspace(0.0, 1.0, n_grid)
    a = w(x)
    d = w.delta_N
    off_kink = np.abs(x - d) > 1e-12
    deriv = np.abs(w.derivative(x[off_kink]))
    bound = 2.0 * w.N / w.sigma
    left_gap = abs(float(-np.expm1(-w._rate_left * d)) - float(-np.expm1(-w._rate_right * (1 - d))))
    grid_tv = float(np.sum(np.abs(np.diff(a))))
    tv = w.total_variation()
    report = {
        "endpoints_zero": float(w(0.0)) == 0.0 and float(w(1.0)) == 0.0,
        "range_ok": bool(np.all(a >= 0.0) and np.all(a <= 1.0)
                         and np.all(np.isfinite(w.log_complement(x)))),
        "continuity_gap": left_gap,
        "max_abs_derivative": float(deriv.max()),
        "derivative_bound": bound,
        "derivative_ok": bool(deriv.max() <= bound),
        "total_variation": tv,
        "total_variation_grid": grid_tv,
        "total_variation_ok": tv <= 2.0 and grid_tv <= 2.0 + 1e-6,
        "delta_N": d,
    }
    report["passed"] = all(report[k] for k in ("endpoints_zero", "range_ok", "derivative_ok",
                                               "total_variation_ok"))
    return report
