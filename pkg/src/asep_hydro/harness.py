"""Experiment orchestration: config loading, ensembles, sweeps, comparisons, flat-file output.

Every run writes CSV files (one-line header) and a ``manifest.json``.  The
manifest's ``timing`` block is the only part that varies between identical
runs; everything else, and every CSV byte, is a function of the config and
the master seed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .burgers import quasi_stationary_profile, riemann_exact, solve
from .core_model import (ConfigError, RateSchedule, ScalingPlan, liggett_rates,
                         reservoir_densities, validate_scaling)
from .entropy import (AuxiliaryWeight, SmoothedKruzkov, auxiliary_weight_properties,
                      otto_integral_inequality, otto_test_functions)
from .kmc import (DEFAULT_BUDGET, BudgetExceeded, TrajectoryRecord, default_sample_times,
                  hydrodynamic_dilation, quasi_static_dilation, replica_seed, run_ensemble)
from .observables import (GridField, SpaceTimeField, boundary_block_residual,
                          comparison_window, h1_residual, l1_distance, l2_distance,
                          one_block_residual, smoothed_density)

MODES = ("hydrodynamic", "quasi-static", "stationary", "phase-scan", "solver-only", "diagnostics")
MODE_KEYS = {m: k for k, m in enumerate(MODES)}


class RunIncomplete(BudgetExceeded):
    """Budget ran out mid-run; partial files and the manifest were written."""

    def __init__(self, message: str, manifest: "RunManifest"):
        super().__init__(message)
        self.manifest = manifest


# -- config ------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    mode: str
    scaling: Mapping[str, Any]
    schedule: Mapping[str, Any]
    initial: Mapping[str, Any]
    T: float
    replicas: int = 20
    seed: int = 0
    out: str = "runs/out"
    M: int = 400
    samples: int = 200
    a: float = 0.5
    burn_in: float = 0.2
    budget: int = DEFAULT_BUDGET
    threads: int = 1
    csv_stride: int = 20
    phase_grid: Mapping[str, Any] = field(default_factory=dict)
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError("horizon T must be positive and finite")
        if self.replicas < 1 and self.mode != "phase-scan":
            raise ConfigError("replicas must be at least 1")
        if self.M < 1 or self.samples < 1 or self.csv_stride < 1:
            raise ConfigError("M, samples and csv_stride must be positive")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in is a fraction of the horizon in [0, 1)")
        if self.a <= 0:
            raise ConfigError("quasi-static exponent a must be positive")
        src = self.initial.get("file") if isinstance(self.initial, Mapping) else None
        if src is not None and not Path(src).is_file():
            raise ConfigError(f"initial profile file {src} does not exist")

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any]) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = dict(d)
            for k in ("T", "a", "burn_in"):
                if k in kw:
                    kw[k] = float(kw[k])
            for k in ("replicas", "seed", "M", "samples", "budget", "threads", "csv_stride"):
                if k in kw:
                    kw[k] = int(kw[k])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentSpec":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        try:
            data = yaml.safe_load(p.read_text())  # JSON is a subset of YAML
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a mapping")
        return cls.from_mapping(data)

    def replace(self, **kw: Any) -> "ExperimentSpec":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentSpec.from_mapping(d)

    def to_dict(self) -> dict[str, Any]:
        return {k: _plain(getattr(self, k)) for k in self.__dataclass_fields__}

    def spec_hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        d.pop("threads")  # thread count does not change results
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    # resolved pieces

    def plans(self) -> list[ScalingPlan]:
        s = dict(self.scaling)
        if "sweep" in s:
            Ns = s.pop("sweep")
            s.setdefault("mode", "strict")
            return [ScalingPlan.from_dict({**s, "N": int(N)}) for N in Ns]
        return [ScalingPlan.from_dict(s)]

    def schedule_for(self, plan: ScalingPlan | None = None) -> RateSchedule:
        s = self.schedule
        t_max = float(s.get("t_max", math.inf))
        if "densities" in s:
            rm, rp = s["densities"]
            return RateSchedule.from_densities(float(rm), float(rp), float(s.get("speed", 1.0)),
                                               t_max)
        if "liggett" in s:
            if plan is None:
                raise ConfigError("Liggett rates depend on the scaling plan")
            rb = s["liggett"]
            rm, rp = (rb, rb) if np.isscalar(rb) else rb
            return liggett_rates(plan.p, plan.sigma, float(rm), float(rp), t_max)
        if "rates" in s:
            return RateSchedule.constant(*map(float, s["rates"]), t_max=t_max)
        if "records" in s:
            return RateSchedule.from_records(s["records"], t_max)
        raise ConfigError("schedule needs one of: densities, liggett, rates, records")

    def initial_field(self, M: int) -> GridField:
        ini = self.initial
        if "constant" in ini:
            return GridField(np.full(M, float(ini["constant"])))
        if "riemann" in ini:
            ul, ur, *rest = ini["riemann"]
            return riemann_exact(float(ul), float(ur), 0.0, M, x0=float(rest[0]) if rest else 0.5)
        if "file" in ini:
            return read_field_csv(ini["file"]).resample(M)
        raise ConfigError("initial profile needs one of: constant, riemann, file")

    def initial_profile(self) -> float | GridField | Callable[[np.ndarray], np.ndarray]:
        """Profile for Bernoulli sampling of the initial configuration."""
        ini = self.initial
        if "constant" in ini:
            return float(ini["constant"])
        if "riemann" in ini:
            ul, ur, *rest = map(float, ini["riemann"])
            x0 = rest[0] if rest else 0.5
            return lambda x: np.where(x < x0, ul, ur)
        return self.initial_field(self.M)


def _plain(v: Any) -> Any:
    if isinstance(v, Mapping):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


# -- manifest ----------------------------------------------------------------

@dataclass
class RunManifest:
    spec: dict[str, Any]
    spec_hash: str
    version: str = __version__
    seeds: dict[str, int] = field(default_factory=dict)
    files: dict[str, dict[str, Any]] = field(default_factory=dict)
    results: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    complete: bool = True
    timing: dict[str, Any] = field(default_factory=dict)

    def comparable(self) -> dict[str, Any]:
        """Everything except wall-clock timing and the output location."""
        d = self.to_dict()
        d.pop("timing")
        d["spec"] = {k: v for k, v in d["spec"].items() if k not in ("out", "threads")}
        return d

    def to_dict(self) -> dict[str, Any]:
        return {"spec": self.spec, "spec_hash": self.spec_hash, "version": self.version,
                "seeds": self.seeds, "files": self.files, "results": _plain(self.results),
                "notes": self.notes, "complete": self.complete, "timing": self.timing}

    def write(self, out: Path) -> Path:
        path = Path(out) / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)
                        + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        return cls(**d)


def _json_default(v: Any) -> Any:
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialise {type(v)}")


# -- CSV ---------------------------------------------------------------------

def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_field_csv(path: str | Path) -> GridField:
    """Read (x_center, value) rows, or a single value column, as a GridField."""
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    if rows and not _is_number(rows[0][-1]):
        rows = rows[1:]
    try:
        vals = [float(r[-1]) for r in rows if r]
    except ValueError as exc:
        raise ConfigError(f"bad field file {path}: {exc}") from exc
    if not vals:
        raise ConfigError(f"field file {path} is empty")
    return GridField(np.array(vals))


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_field(path: str | Path, f: GridField) -> Path:
    return write_csv(path, ("x_center", "value"), zip(f.centers, f.values))


def write_space_time(path: str | Path, f: SpaceTimeField, value_name: str = "value") -> Path:
    x = f.centers

    def rows():
        for k, t in enumerate(f.times):
            for xc, v in zip(x, f.values[k]):
                yield t, xc, v

    return write_csv(path, ("t", "x_center", value_name), rows())


def write_trajectory(path: str | Path, rec: TrajectoryRecord, stride: int = 1) -> Path:
    """Long format (t, site, value, kind): occupations and integrated currents h(i)."""
    idx = list(range(0, len(rec.times), stride))
    if idx[-1] != len(rec.times) - 1:
        idx.append(len(rec.times) - 1)
    h = rec.h

    def rows():
        for k in idx:
            t = rec.times[k]
            for i, v in enumerate(rec.eta[k], start=1):
                yield t, i, int(v), "eta"
            for i, v in enumerate(h[k]):
                yield t, i, int(v), "h"

    return write_csv(path, ("t", "site", "value", "kind"), rows())


def write_phase_diagram(path: str | Path, points: Sequence[Any]) -> Path:
    return write_csv(path, ("rho_minus", "rho_plus", "phase", "u_bar", "current"),
                     ((q.rho_minus, q.rho_plus, q.phase, q.u_bar, q.current) for q in points))


@dataclass(frozen=True)
class Check:
    name: str
    parameters: str
    value: float
    threshold: float
    passed: bool


def write_report(path: str | Path, checks: Sequence[Check]) -> Path:
    return write_csv(path, ("check", "parameters", "value", "threshold", "pass"),
                     ((c.name, c.parameters, c.value, c.threshold, c.passed) for c in checks))


# -- comparison ----------------------------------------------------------------

@dataclass(frozen=True)
class DistanceTable:
    times: np.ndarray
    l1: np.ndarray
    l2: np.ndarray

    @property
    def l1_mean(self) -> float:
        return _time_mean(self.times, self.l1)

    @property
    def l2_mean(self) -> float:
        return _time_mean(self.times, self.l2)

    def rows(self) -> list[tuple[Any, float, float]]:
        out: list[tuple[Any, float, float]] = list(zip(self.times.tolist(), self.l1.tolist(),
                                                       self.l2.tolist()))
        out.append(("time-average", self.l1_mean, self.l2_mean))
        return out


def _time_mean(t: np.ndarray, v: np.ndarray) -> float:
    if t.size == 1 or t[-1] == t[0]:
        return float(np.mean(v))
    return float(np.trapezoid(v, t) / (t[-1] - t[0]))


def compare(fields_a: SpaceTimeField, fields_b: SpaceTimeField,
            times: Sequence[float] | None = None, lo: float = 0.0, hi: float = 1.0,
            atol: float = 1e-9) -> DistanceTable:
    """Per-time L1/L2 distances on [lo, hi] at the sample times both fields share."""
    want = fields_a.times if times is None else np.asarray(times, float)
    ts, l1, l2 = [], [], []
    for t in want:
        ia = np.flatnonzero(np.abs(fields_a.times - t) <= atol)
        ib = np.flatnonzero(np.abs(fields_b.times - t) <= atol)
        if ia.size and ib.size:
            a, b = fields_a.at(int(ia[0])), fields_b.at(int(ib[0]))
            ts.append(float(t))
            l1.append(l1_distance(a, b, lo, hi))
            l2.append(l2_distance(a, b, lo, hi))
    if not ts:
        raise ValueError("the two fields share no sample times")
    return DistanceTable(np.array(ts), np.array(l1), np.array(l2))


def mean_se(x: Sequence[float]) -> tuple[float, float]:
    x = np.asarray(x, float)
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
    return float(np.mean(x)), se


def ensemble_smoothed(recs: Sequence[TrajectoryRecord], K: int) -> SpaceTimeField:
    """Replica mean of the smoothed density on N cells; replica order does not matter."""
    # K^2 * hat is an integer, so summing numerators makes the mean order-independent
    acc = np.zeros(recs[0].eta.shape, dtype=np.int64)
    for r in recs:
        acc += np.rint(smoothed_density(r.eta, K) * (K * K)).astype(np.int64)
    return SpaceTimeField(recs[0].times, acc / float(K * K * len(recs)))


def bulk_density(rec: TrajectoryRecord, t_start: float, lo: float = 0.25,
                 hi: float = 0.75) -> float:
    """Exact time average over [t_start, T] of the density on sites with centres in [lo, hi]."""
    x = (np.arange(rec.N) + 0.5) / rec.N
    sel = (x >= lo) & (x <= hi)
    return float(np.mean(rec.time_averaged_density(t_start)[sel]))


# -- modes ---------------------------------------------------------------------

class _Run:
    def __init__(self, spec: ExperimentSpec, out: Path):
        self.spec = spec
        self.out = out
        self.manifest = RunManifest(spec.to_dict(), spec.spec_hash())
        self.started = time.perf_counter()
        self.manifest.timing["started"] = datetime.now(timezone.utc).isoformat()

    def file(self, name: str) -> Path:
        return self.out / name

    def register(self, path: Path) -> None:
        data = path.read_bytes()
        self.manifest.files[path.name] = {"sha256": hashlib.sha256(data).hexdigest(),
                                          "bytes": len(data)}

    def ensemble(self, initial, schedule, plan, T, key, D=None, sample_times=None):
        spec = self.spec
        mk = (MODE_KEYS[spec.mode], *key)
        for r in range(spec.replicas):
            self.manifest.seeds[_task_name(key, r)] = replica_seed(spec.seed, *mk, r)
        try:
            return run_ensemble(initial, schedule, plan, T, spec.replicas, spec.seed, key=mk,
                                time_dilation=D, sample_times=sample_times,
                                threads=spec.threads, budget=spec.budget)
        except BudgetExceeded as exc:
            if exc.partial is not None:
                self.register(write_trajectory(self.file(f"partial_{_task_name(key)}.csv"),
                                               exc.partial, spec.csv_stride))
            self.manifest.complete = False
            self.manifest.notes.append(f"budget exhausted in task {key}: {exc}")
            raise

    def write_replicas(self, recs, tag: str) -> None:
        for r, rec in enumerate(recs):
            self.register(write_trajectory(self.file(f"replica_{tag}_r{r:03d}.csv"), rec,
                                           self.spec.csv_stride))

    def finish(self) -> RunManifest:
        self.manifest.timing["finished"] = datetime.now(timezone.utc).isoformat()
        self.manifest.timing["elapsed_s"] = time.perf_counter() - self.started
        self.manifest.write(self.out)
        return self.manifest


def _task_name(key: Sequence[Any], r: int | None = None) -> str:
    s = "-".join(str(k) for k in key)
    return s if r is None else f"{s}-r{r}"


def _check_plan(run: _Run, plan: ScalingPlan) -> None:
    rep = validate_scaling(plan)
    for msg in rep.advisories + rep.errors:
        run.manifest.notes.append(f"N={plan.N}: {msg}")


def _mode_solver_only(run: _Run) -> None:
    spec = run.spec
    sched = spec.schedule_for()
    u0 = spec.initial_field(spec.M)
    ts = default_sample_times(spec.T, spec.samples)
    f = solve(u0, sched, spec.T, spec.M, sample_times=ts)
    run.register(write_space_time(run.file("spacetime.csv"), f, "u"))
    run.register(write_field(run.file("final.csv"), f.at(len(f) - 1)))
    res: dict[str, Any] = {"mass_final": f.at(len(f) - 1).integral()}
    if "riemann" in spec.initial:
        ul, ur, *rest = map(float, spec.initial["riemann"])
        exact = riemann_exact(ul, ur, spec.T, spec.M, x0=rest[0] if rest else 0.5)
        res["l1_to_riemann_exact"] = l1_distance(f.at(len(f) - 1), exact)
    run.manifest.results.update(res)


def _mode_field_sweep(run: _Run, quasi_static: bool) -> None:
    spec = run.spec
    sched = spec.schedule_for()
    ts = default_sample_times(spec.T, spec.samples)
    ref = None
    if not quasi_static:
        ref = solve(spec.initial_field(spec.M), sched, spec.T, spec.M, sample_times=ts)
        run.register(write_space_time(run.file("solver_reference.csv"), ref, "u"))
    dist_rows, summary_rows = [], []
    for plan in spec.plans():
        _check_plan(run, plan)
        D = quasi_static_dilation(plan.N, spec.a) if quasi_static else hydrodynamic_dilation(plan.N)
        recs = run.ensemble(spec.initial_profile(), sched, plan, spec.T, (plan.N,), D, ts)
        run.write_replicas(recs, f"N{plan.N}")
        K = plan.K
        mean = ensemble_smoothed(recs, K)
        single = ensemble_smoothed(recs[:1], K)
        run.register(write_space_time(run.file(f"ensemble_N{plan.N}.csv"), mean))
        lo, hi = comparison_window(plan.N, K)
        target = ref if ref is not None else _quasi_stationary_field(sched, ts, spec.M)
        keep = ~np.isnan(target.values[:, 0])
        if not keep.any():
            raise ConfigError("every sample time lies on the critical line")
        tgt = SpaceTimeField(target.times[keep], target.values[keep])
        tab = compare(mean, tgt, tgt.times, lo, hi)
        tab1 = compare(single, tgt, tgt.times, lo, hi)
        for t, d1, d2, s1 in zip(tab.times, tab.l1, tab.l2, tab1.l1):
            dist_rows.append((plan.N, t, d1, d2, s1))
        summary_rows.append((plan.N, K, plan.sigma, plan.sigma_tilde, D, tab.l1_mean,
                             tab.l2_mean, tab1.l1_mean))
        run.manifest.results.setdefault("l1_time_average", {})[str(plan.N)] = tab.l1_mean
    run.register(write_csv(run.file("distances.csv"), ("N", "t", "l1", "l2", "l1_replica0"),
                           dist_rows))
    run.register(write_csv(run.file("summary.csv"),
                           ("N", "K", "sigma", "sigma_tilde", "time_dilation", "l1_time_average",
                            "l2_time_average", "l1_replica0_time_average"), summary_rows))


def _quasi_stationary_field(sched: RateSchedule, ts: np.ndarray, M: int) -> SpaceTimeField:
    """Constant-in-space target u_bar(rho_-(t), rho_+(t)); NaN rows on the critical line."""
    vals = np.empty((ts.size, M))
    for k, t in enumerate(ts):
        q = quasi_stationary_profile(*reservoir_densities(sched, t))
        vals[k] = np.nan if q.u_bar is None else q.u_bar
    return SpaceTimeField(ts, vals)


def _stationary_target(raw: Mapping[str, Any], sched: RateSchedule) -> tuple[float, float]:
    """Bulk densities the stationary measure should show on either side."""
    if "liggett" in raw:
        rb = raw["liggett"]
        return (float(rb), float(rb)) if np.isscalar(rb) else (float(rb[0]), float(rb[1]))
    return reservoir_densities(sched, 0.0)


def _mode_stationary(run: _Run) -> None:
    spec = run.spec
    ts = default_sample_times(spec.T, spec.samples)
    t_burn = spec.burn_in * spec.T
    rows, summary = [], []
    for plan in spec.plans():
        sched = spec.schedule_for(plan)
        rm, rp = _stationary_target(spec.schedule, sched)
        recs = run.ensemble(spec.initial_profile(), sched, plan, spec.T, (plan.N,), None, ts)
        run.write_replicas(recs, f"N{plan.N}")
        dens, curr = [], []
        k0 = int(np.searchsorted(ts, t_burn - 1e-12))
        for r, rec in enumerate(recs):
            d = bulk_density(rec, t_burn)
            dh = (rec.h[-1, 1:-1] - rec.h[k0, 1:-1]).mean()
            c = float(dh / (rec.time_dilation * (rec.times[-1] - rec.times[k0])))
            dens.append(d)
            curr.append(c)
            rows.append((plan.N, r, d, c))
        m, se = mean_se(dens)
        cm, cse = mean_se(curr)
        target = 0.5 * (rm + rp)
        summary.append((plan.N, rm, rp, m, se, (m - target) / se, cm, cse,
                        plan.p * target * (1 - target)))
        run.manifest.results.setdefault("bulk_density", {})[str(plan.N)] = {
            "mean": m, "se": se, "rho_bar": target}
    run.register(write_csv(run.file("stationary.csv"),
                           ("N", "replica", "bulk_density", "current"), rows))
    run.register(write_csv(run.file("stationary_summary.csv"),
                           ("N", "rho_minus", "rho_plus", "mean_density", "se", "z_score",
                            "mean_current", "current_se", "product_measure_current"), summary))


def _mode_phase_scan(run: _Run) -> None:
    spec = run.spec
    g = spec.phase_grid
    try:
        pts = [tuple(map(float, q)) for q in g["points"]] if "points" in g else [
            (float(a), float(b)) for a in g["rho_minus"] for b in g["rho_plus"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"phase_grid needs points or rho_minus/rho_plus lists: {exc}") from exc
    u0 = spec.initial_field(spec.M)
    plan = spec.plans()[0] if spec.replicas > 0 else None
    if plan is not None:
        _check_plan(run, plan)
    t_burn = spec.burn_in * spec.T
    phase_pts, rows = [], []
    for j, (rm, rp) in enumerate(pts):
        q = quasi_stationary_profile(rm, rp)
        phase_pts.append(q)
        sched = RateSchedule.from_densities(rm, rp)
        f = solve(u0, sched, spec.T, spec.M)
        final = f.at(len(f) - 1)
        solver_bulk = float(np.mean(final.values[(final.centers >= 0.25) & (final.centers <= 0.75)]))
        solver_l1 = None if q.u_bar is None else l1_distance(final, GridField(np.full(spec.M, q.u_bar)))
        kmc_m = kmc_se = None
        if plan is not None:
            recs = run.ensemble(spec.initial_profile(), sched, plan, spec.T, (plan.N, j))
            kmc_m, kmc_se = mean_se([bulk_density(r, t_burn) for r in recs])
        rows.append((rm, rp, q.phase, q.u_bar, q.current, solver_bulk, solver_l1, kmc_m, kmc_se))
    run.register(write_phase_diagram(run.file("phase_diagram.csv"), phase_pts))
    run.register(write_csv(run.file("phase_scan.csv"),
                           ("rho_minus", "rho_plus", "phase", "u_bar", "current", "solver_bulk",
                            "solver_l1", "kmc_bulk", "kmc_se"), rows))
    l1s = [r[6] for r in rows if r[6] is not None]
    run.manifest.results["max_solver_l1"] = max(l1s) if l1s else None


def block_residual_table(recs: Sequence[TrajectoryRecord], K: int, t_min: float) -> np.ndarray:
    """Per-replica rows (one_block, h1, boundary_left, boundary_right)."""
    out = np.empty((len(recs), 4))
    for r, rec in enumerate(recs):
        bl, br = boundary_block_residual(rec, K, t_min=t_min)
        out[r] = (one_block_residual(rec, K, t_min), h1_residual(rec, K, t_min), bl, br)
    return out


def paired_smaller(a: np.ndarray, b: np.ndarray, z: float = 1.96) -> tuple[float, float, bool]:
    """Is E[a] < E[b]?  One-sided paired test: mean(a-b) + z*SE < 0."""
    m, se = mean_se(np.asarray(a) - np.asarray(b))
    return m, se, m + z * se < 0


def welch_smaller(a: np.ndarray, b: np.ndarray, z: float = 1.96) -> tuple[float, float, bool]:
    """Is E[a] < E[b] for independent samples?  mean(a)-mean(b) + z*SE < 0."""
    ma, sa = mean_se(a)
    mb, sb = mean_se(b)
    se = math.hypot(sa, sb)
    return ma - mb, se, ma - mb + z * se < 0


def _mode_diagnostics(run: _Run) -> None:
    spec = run.spec
    dg = spec.diagnostics
    plan = spec.plans()[0]
    _check_plan(run, plan)
    sched = spec.schedule_for(plan)
    ts = default_sample_times(spec.T, spec.samples)
    t_min = float(dg.get("t_min", spec.burn_in * spec.T))
    Ks = [int(k) for k in dg.get("K", [4, plan.K])]
    factors = [float(f) for f in dg.get("sigma_tilde_factors", [1.0, 10.0])]
    rows, checks = [], []
    tables: dict[tuple[float, int], np.ndarray] = {}
    for fi, fac in enumerate(factors):
        p2 = plan.with_sigma_tilde(plan.sigma_tilde * fac)
        recs = run.ensemble(spec.initial_profile(), sched, p2, spec.T, (plan.N, fi), None, ts)
        for K in Ks:
            tab = block_residual_table(recs, K, t_min)
            tables[(fac, K)] = tab
            for r, v in enumerate(tab):
                rows.append((fac, K, r, *v))
    run.register(write_csv(run.file("residuals.csv"),
                           ("sigma_tilde_factor", "K", "replica", "one_block", "h1",
                            "boundary_left", "boundary_right"), rows))
    names = ("one_block", "h1", "boundary")
    f0 = factors[0]
    k_small, k_large = min(Ks), max(Ks)
    a, b = tables[(f0, k_large)], tables[(f0, k_small)]
    cols = (a[:, 0], a[:, 1], a[:, 2] + a[:, 3]), (b[:, 0], b[:, 1], b[:, 2] + b[:, 3])
    for name, x, y in zip(names, *cols):
        m, se, ok = paired_smaller(x, y)
        checks.append(Check(f"{name}_residual_decreases_in_K",
                            f"N={plan.N};K={k_large}vs{k_small};sigma_tilde_factor={f0}",
                            m + 1.96 * se, 0.0, ok))
    if len(factors) > 1:
        K_ref = max(Ks)
        base = tables[(factors[0], K_ref)]
        boost = tables[(factors[-1], K_ref)]
        m, se, ok = welch_smaller(boost[:, 2] + boost[:, 3], base[:, 2] + base[:, 3])
        checks.append(Check("boundary_residual_decreases_in_sigma_tilde",
                            f"N={plan.N};K={K_ref};factor={factors[-1]}vs{factors[0]}",
                            m + 1.96 * se, 0.0, ok))
    for N, s in dg.get("auxiliary_weights", []):
        rep = auxiliary_weight_properties(AuxiliaryWeight(int(N), float(s)))
        checks.append(Check("auxiliary_weight_total_variation", f"N={N};sigma={s}",
                            rep["total_variation"], 2.0, bool(rep["passed"])))
    if dg.get("otto", True):
        checks.extend(otto_checks(spec.initial_field(spec.M), sched, spec.T, spec.M,
                                  label=f"schedule@t=0:{reservoir_densities(sched, 0.0)}"))
    run.register(write_report(run.file("diagnostics.csv"), checks))
    run.manifest.results["checks_passed"] = all(c.passed for c in checks)


def otto_checks(u0: GridField, schedule: RateSchedule, T: float, M: int = 400,
                hs: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9), tol: float = 1e-3,
                delta: float = 1e-3, label: str = "") -> list[Check]:
    """lhs <= rhs + tol for smoothed Kruzkov pairs at each h and three test functions."""
    field_ = solve(u0, schedule, T, M, every_step=True)
    pair = SmoothedKruzkov(delta)
    checks = []
    for h in hs:
        for psi in otto_test_functions(T):
            lhs, rhs = otto_integral_inequality(field_, pair, h, psi, u0, schedule)
            checks.append(Check("otto_integral_inequality",
                                f"{label};h={h};psi={psi.name};M={M}", lhs - rhs, tol,
                                lhs <= rhs + tol))
    return checks


def run_experiment(spec: ExperimentSpec, out: str | Path | None = None) -> RunManifest:
    """Run one experiment, writing CSV outputs and ``manifest.json`` into the output directory."""
    out_dir = Path(out if out is not None else spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = _Run(spec, out_dir)
    try:
        if spec.mode == "solver-only":
            _mode_solver_only(run)
        elif spec.mode == "hydrodynamic":
            _mode_field_sweep(run, quasi_static=False)
        elif spec.mode == "quasi-static":
            _mode_field_sweep(run, quasi_static=True)
        elif spec.mode == "stationary":
            _mode_stationary(run)
        elif spec.mode == "phase-scan":
            _mode_phase_scan(run)
        else:
            _mode_diagnostics(run)
    except BudgetExceeded as exc:
        run.manifest.complete = False
        raise RunIncomplete(str(exc), run.finish()) from exc
    return run.finish()
