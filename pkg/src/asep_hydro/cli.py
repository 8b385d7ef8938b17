"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 event budget exhausted.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

from .core_model import ConfigError
from .harness import (ExperimentSpec, RunIncomplete, compare, read_field_csv, run_experiment,
                      write_csv)
from .kmc import BudgetExceeded
from .observables import GridField, SpaceTimeField

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3

# subcommand -> modes it accepts
_MODES = {
    "simulate": ("hydrodynamic", "quasi-static", "stationary"),
    "solve": ("solver-only",),
    "phase-scan": ("phase-scan",),
    "diagnose": ("diagnostics",),
}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # flags are accepted before or after the subcommand; the subcommand copy
    # must not overwrite a value given earlier, hence SUPPRESS there
    default = argparse.SUPPRESS if suppress else None
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=default,
                        help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int, default=default,
                        help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, default=default,
                        help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=default,
                        help="worker threads for replicas")
    return common


def _parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)

    ap = argparse.ArgumentParser(prog="asep-hydro", parents=[_global_flags(False)],
                                 description="Open ASEP simulation and Burgers comparison tool.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "run particle ensembles (hydrodynamic, quasi-static, "
                                     "stationary modes)"),
                        ("solve", "run the finite-volume solver only"),
                        ("phase-scan", "scan constant boundary densities"),
                        ("diagnose", "block-estimate and entropy diagnostics"),
                        ("validate-config", "parse and check a config without running it")):
        sub.add_parser(name, parents=[common], help=help_)
    cmp_ = sub.add_parser("compare", parents=[common],
                          help="L1/L2 distances between two field CSVs")
    cmp_.add_argument("a", type=Path)
    cmp_.add_argument("b", type=Path)
    cmp_.add_argument("--lo", type=float, default=0.0)
    cmp_.add_argument("--hi", type=float, default=1.0)
    return ap


def _load_spec(args: argparse.Namespace) -> ExperimentSpec:
    if args.config is None:
        raise ConfigError("--config is required")
    spec = ExperimentSpec.load(args.config)
    return spec.replace(seed=args.seed, out=str(args.out) if args.out else None,
                        threads=args.threads)


def _read_space_time(path: Path) -> SpaceTimeField:
    """Space-time CSV (t, x_center, value) or a plain field CSV (x_center, value)."""
    with path.open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if len(header) == 2:
        f = read_field_csv(path)
        return SpaceTimeField([0.0], f.values[None, :])
    times: list[float] = []
    vals: dict[float, list[float]] = {}
    for r in body:
        t = float(r[0])
        if t not in vals:
            times.append(t)
            vals[t] = []
        vals[t].append(float(r[2]))
    return SpaceTimeField(times, [vals[t] for t in times])


def _compare(args: argparse.Namespace) -> int:
    a, b = _read_space_time(args.a), _read_space_time(args.b)
    if a.M != b.M:
        # align onto the coarser grid by cell averaging
        M = min(a.M, b.M)
        a = SpaceTimeField(a.times, [GridField(v).resample(M).values for v in a.values])
        b = SpaceTimeField(b.times, [GridField(v).resample(M).values for v in b.values])
    if a.times.size == 1 and b.times.size == 1:
        b = SpaceTimeField(a.times, b.values)
    tab = compare(a, b, lo=args.lo, hi=args.hi)
    rows = tab.rows()
    if args.out is not None:
        write_csv(Path(args.out) / "compare.csv", ("t", "l1", "l2"), rows)
    for r in rows:
        print(",".join(str(v) for v in r))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "compare":
            return _compare(args)
        spec = _load_spec(args)
        if args.command == "validate-config":
            plans = spec.plans()
            for plan in plans:
                spec.schedule_for(plan)
            print(json.dumps({"valid": True, "mode": spec.mode, "spec_hash": spec.spec_hash(),
                              "N": [p.N for p in plans]}))
            return EXIT_OK
        allowed = _MODES[args.command]
        if spec.mode not in allowed:
            raise ConfigError(f"'{args.command}' runs modes {allowed}, config has {spec.mode!r}")
        manifest = run_experiment(spec)
        print(json.dumps({"out": spec.out, "complete": manifest.complete,
                          "results": manifest.results}, default=str))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunIncomplete as exc:
        print(f"budget exhausted, partial results in {exc.manifest.spec.get('out')}: {exc}",
              file=sys.stderr)
        return EXIT_BUDGET
    except BudgetExceeded as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
