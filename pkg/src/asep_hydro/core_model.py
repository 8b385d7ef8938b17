"""Static model data: lattice configurations, boundary rate schedules, scaling plans.

The dynamics is the open ASEP generated by

    L_{N,t} = p L_TAS + sigma_N L_SS + sigma_tilde_N (L_{-,t} + L_{+,t})

with reservoirs at sites 1 and N.  Everything here is immutable once built.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised for malformed or inconsistent model parameters."""


class OutOfRangeError(ConfigError):
    """A time lies outside the coverage of a rate schedule."""


@dataclass(frozen=True)
class LatticeConfig:
    """Occupation state eta_1..eta_N (stored 0-based)."""

    occupations: np.ndarray

    def __post_init__(self) -> None:
        occ = np.asarray(self.occupations)
        if occ.ndim != 1 or occ.size < 2:
            raise ConfigError("a lattice needs at least two sites")
        if not np.all((occ == 0) | (occ == 1)):
            raise ConfigError("occupations must be 0 or 1")
        occ = occ.astype(np.int8)
        occ.setflags(write=False)
        object.__setattr__(self, "occupations", occ)

    @property
    def size(self) -> int:
        return int(self.occupations.size)

    @classmethod
    def from_sequence(cls, values: Iterable[int]) -> "LatticeConfig":
        return cls(np.asarray(list(values), dtype=np.int8))

    @classmethod
    def constant(cls, N: int, value: int) -> "LatticeConfig":
        return cls(np.full(N, value, dtype=np.int8))

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True)
class RateSchedule:
    """Piecewise-constant boundary rates (alpha, beta, gamma, delta)(t).

    ``breakpoints[k]`` opens interval k, which is left-closed and right-open.
    The last interval extends to ``t_max`` (inclusive, so that a horizon equal
    to ``t_max`` is covered).
    """

    breakpoints: tuple[float, ...]
    values: tuple[tuple[float, float, float, float], ...]
    t_max: float = math.inf
    allow_zero: bool = False

    def __post_init__(self) -> None:
        bps = tuple(float(b) for b in self.breakpoints)
        vals = tuple(tuple(float(v) for v in q) for q in self.values)
        if not bps or bps[0] != 0.0:
            raise ConfigError("schedule must start at t=0")
        if len(bps) != len(vals):
            raise ConfigError("one rate quadruple is needed per interval")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
            raise ConfigError("breakpoints must be strictly increasing")
        for q in vals:
            if len(q) != 4:
                raise ConfigError("rates come in quadruples (alpha, beta, gamma, delta)")
            if not all(math.isfinite(r) and (r > 0 or (self.allow_zero and r == 0)) for r in q):
                raise ConfigError(f"boundary rates must be positive and finite, got {q}")
        if not self.t_max > bps[-1]:
            raise ConfigError("t_max must exceed the last breakpoint")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "t_max", float(self.t_max))

    @classmethod
    def constant(cls, alpha: float, beta: float, gamma: float, delta: float,
                 t_max: float = math.inf) -> "RateSchedule":
        return cls((0.0,), ((alpha, beta, gamma, delta),), t_max)

    @classmethod
    def from_densities(cls, rho_minus: float, rho_plus: float, speed: float = 1.0,
                       t_max: float = math.inf) -> "RateSchedule":
        """Constant schedule with alpha+gamma = beta+delta = speed and the given densities.

        Densities must lie strictly inside (0, 1) so that all four rates stay positive.
        """
        for rho in (rho_minus, rho_plus):
            if not 0.0 < rho < 1.0:
                raise ConfigError(f"reservoir density {rho} must lie in (0, 1)")
        return cls.constant(speed * rho_minus, speed * (1 - rho_plus),
                            speed * (1 - rho_minus), speed * rho_plus, t_max)

    @property
    def n_intervals(self) -> int:
        return len(self.breakpoints)

    def interval_index(self, t: float) -> int:
        if not (0.0 <= t <= self.t_max) or math.isnan(t):
            raise OutOfRangeError(f"time {t} is outside the schedule coverage [0, {self.t_max}]")
        return int(np.searchsorted(self.breakpoints, t, side="right") - 1)

    def rates(self, t: float) -> tuple[float, float, float, float]:
        return self.values[self.interval_index(t)]

    def next_breakpoint(self, t: float) -> float:
        """First breakpoint strictly after t, or inf."""
        k = self.interval_index(t)
        return self.breakpoints[k + 1] if k + 1 < self.n_intervals else math.inf

    def breakpoints_in(self, t0: float, t1: float) -> list[float]:
        return [b for b in self.breakpoints if t0 < b < t1]

    def covers(self, T: float) -> bool:
        return 0.0 <= T <= self.t_max

    def to_records(self) -> list[dict[str, float]]:
        return [
            {"t_start": b, "alpha": q[0], "beta": q[1], "gamma": q[2], "delta": q[3]}
            for b, q in zip(self.breakpoints, self.values)
        ]

    @classmethod
    def from_records(cls, records: Sequence[Mapping[str, Any]],
                     t_max: float = math.inf) -> "RateSchedule":
        try:
            rows = sorted(records, key=lambda r: float(r["t_start"]))
            bps = tuple(float(r["t_start"]) for r in rows)
            vals = tuple(
                (float(r["alpha"]), float(r["beta"]), float(r["gamma"]), float(r["delta"]))
                for r in rows
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad schedule record: {exc}") from exc
        return cls(bps, vals, t_max)


def reservoir_densities(schedule: RateSchedule, t: float) -> tuple[float, float]:
    """Reversible densities rho_- = alpha/(alpha+gamma), rho_+ = delta/(beta+delta) at time t."""
    a, b, g, d = schedule.rates(t)
    return a / (a + g), d / (b + d)


def liggett_rates(p: float, sigma: float, rho_bar_minus: float, rho_bar_plus: float,
                  t_max: float = math.inf) -> RateSchedule:
    """Boundary rates projecting the infinite ASEP with Bernoulli reservoirs onto {1..N}.

    With jump rates p+sigma to the right and sigma to the left, a Bernoulli(rho_bar)
    half-line reservoir on each side gives

        alpha = (p+sigma) rho_bar_-,   gamma = sigma (1 - rho_bar_-),
        beta  = (p+sigma)(1 - rho_bar_+), delta = sigma rho_bar_+.

    Saturated densities (0 or 1) make some rates vanish; such schedules are
    flagged with ``allow_zero`` since they break the positivity assumption.
    """
    if not (p > 0 and sigma > 0):
        raise ConfigError("p and sigma must be positive")
    for rho in (rho_bar_minus, rho_bar_plus):
        if not 0.0 <= rho <= 1.0:
            raise ConfigError(f"reservoir density {rho} outside [0, 1]")
    quad = (
        (p + sigma) * rho_bar_minus,
        (p + sigma) * (1.0 - rho_bar_plus),
        sigma * (1.0 - rho_bar_minus),
        sigma * rho_bar_plus,
    )
    return RateSchedule((0.0,), (quad,), t_max, allow_zero=not all(r > 0 for r in quad))


# -- scaling -----------------------------------------------------------------

STRICT_KAPPA_RANGE = (0.0, 2.0 / 7.0)
ADVISORY_THRESHOLD = 0.5


@dataclass(frozen=True)
class ScalingPlan:
    """Rates and mesoscopic block size for one lattice size N."""

    N: int
    sigma: float
    sigma_tilde: float
    K: int
    p: float = 1.0
    kappa: float | None = None
    theta: float | None = None
    mode: str = "exploratory"

    def __post_init__(self) -> None:
        if self.N < 2:
            raise ConfigError("N must be at least 2")
        if self.p <= 0 or self.sigma < 0 or self.sigma_tilde <= 0:
            raise ConfigError("p and sigma_tilde must be positive, sigma nonnegative")
        if self.K < 1:
            raise ConfigError("K must be a positive integer")
        if self.mode not in ("strict", "exploratory"):
            raise ConfigError(f"unknown scaling mode {self.mode!r}")

    @classmethod
    def strict(cls, N: int, kappa: float = 1.0 / 7.0, theta: float = 1.0,
               p: float = 1.0) -> "ScalingPlan":
        """sigma_N = N^(5/7+kappa), K = floor(N^(4/7+kappa)), sigma_tilde_N = N^theta."""
        if theta <= 0:
            raise ConfigError("theta must be positive")
        sigma = float(N) ** (5.0 / 7.0 + kappa)
        # floor with a guard against N^(x) landing a hair under an integer
        K = int(math.floor(float(N) ** (4.0 / 7.0 + kappa) + 1e-9))
        return cls(N=N, sigma=sigma, sigma_tilde=float(N) ** theta, K=max(K, 1), p=p,
                   kappa=kappa, theta=theta, mode="strict")

    @classmethod
    def explicit(cls, N: int, sigma: float, sigma_tilde: float, K: int,
                 p: float = 1.0) -> "ScalingPlan":
        return cls(N=N, sigma=float(sigma), sigma_tilde=float(sigma_tilde), K=int(K), p=p)

    def with_sigma_tilde(self, sigma_tilde: float) -> "ScalingPlan":
        return ScalingPlan(self.N, self.sigma, float(sigma_tilde), self.K, self.p,
                           self.kappa, self.theta, self.mode)

    def with_K(self, K: int) -> "ScalingPlan":
        return ScalingPlan(self.N, self.sigma, self.sigma_tilde, int(K), self.p,
                           self.kappa, self.theta, self.mode)

    def to_dict(self) -> dict[str, Any]:
        return {"N": self.N, "sigma": self.sigma, "sigma_tilde": self.sigma_tilde, "K": self.K,
                "p": self.p, "kappa": self.kappa, "theta": self.theta, "mode": self.mode}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScalingPlan":
        """Either {N, kappa, mode: strict[, theta, p]} or {N, sigma, sigma_tilde, K[, p]}."""
        try:
            N = int(d["N"])
            p = float(d.get("p", 1.0))
            if d.get("mode", "strict" if "kappa" in d else "exploratory") == "strict":
                return cls.strict(N, float(d.get("kappa", 1.0 / 7.0)),
                                  float(d.get("theta", 1.0)), p)
            return cls.explicit(N, float(d["sigma"]), float(d["sigma_tilde"]), int(d["K"]), p)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scaling plan {dict(d)!r}: {exc}") from exc


@dataclass(frozen=True)
class ScalingReport:
    passed: bool
    ratios: dict[str, float]
    advisories: tuple[str, ...] = field(default_factory=tuple)
    errors: tuple[str, ...] = field(default_factory=tuple)


def scaling_ratios(plan: ScalingPlan) -> dict[str, float]:
    N, s, K = float(plan.N), plan.sigma, float(plan.K)
    inf = math.inf
    return {
        "N^(5/7)/sigma": N ** (5.0 / 7.0) / s if s > 0 else inf,
        "sigma/N": s / N,
        "N*sigma/K^3": N * s / K ** 3,
        "N*K^2/sigma^3": N * K ** 2 / s ** 3 if s > 0 else inf,
        "sigma^2/(N*K)": s ** 2 / (N * K),
    }


def validate_scaling(plan: ScalingPlan, threshold: float = ADVISORY_THRESHOLD) -> ScalingReport:
    """Hard-check block geometry, flag asymptotic ratios that are not small.

    K >= N/2 raises, since block averages cannot fit inside the lattice.
    """
    if 2 * plan.K >= plan.N:
        raise ConfigError(f"K={plan.K} must be smaller than N/2={plan.N / 2}")
    ratios = scaling_ratios(plan)
    advisories = tuple(f"{name}={val:.4g} is not small" for name, val in ratios.items()
                       if not val < threshold)
    errors: list[str] = []
    if plan.mode == "strict":
        lo, hi = STRICT_KAPPA_RANGE
        if plan.kappa is None or not lo < plan.kappa < hi:
            errors.append(f"kappa={plan.kappa} outside ({lo}, {hi:.6g})")
    return ScalingReport(not errors, ratios, advisories, tuple(errors))
