from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from asep_hydro.burgers import quasi_stationary_profile
from asep_hydro.cli import main
from asep_hydro.core_model import ConfigError, RateSchedule, ScalingPlan, liggett_rates
from asep_hydro.harness import (ExperimentSpec, RunIncomplete, RunManifest, compare,
                                ensemble_smoothed, paired_smaller, read_field_csv,
                                run_experiment, welch_smaller, write_field)
from asep_hydro.kmc import run_ensemble
from asep_hydro.observables import GridField, SpaceTimeField

SMALL_PLAN = {"N": 32, "sigma": 4.0, "sigma_tilde": 32.0, "K": 3}


def spec(**kw):
    base = dict(mode="solver-only", scaling=SMALL_PLAN, schedule={"densities": [0.2, 0.8]},
                initial={"riemann": [0.2, 0.8, 0.5]}, T=0.5)
    base.update(kw)
    return ExperimentSpec.from_mapping(base)


def write_config(tmp_path: Path, name="cfg.yaml", **kw) -> Path:
    p = tmp_path / name
    p.write_text(yaml.safe_dump(spec(out=str(tmp_path / "out"), **kw).to_dict()))
    return p


def read_rows(path: Path) -> list[dict[str, str]]:
    with path.open() as fh:
        return list(csv.DictReader(fh))


class TestSpec:
    @pytest.mark.parametrize("bad", [{"mode": "warp"}, {"T": 0.0}, {"T": -1.0},
                                     {"mode": "hydrodynamic", "replicas": 0},
                                     {"burn_in": 1.0}, {"colour": "red"},
                                     {"initial": {"file": "/nonexistent/profile.csv"}}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            spec(**bad)

    def test_roundtrip_and_hash(self, tmp_path):
        s = spec()
        assert ExperimentSpec.from_mapping(s.to_dict()) == s
        assert s.replace(out="elsewhere", threads=4).spec_hash() == s.spec_hash()
        assert s.replace(seed=1).spec_hash() != s.spec_hash()
        cfg = write_config(tmp_path)
        assert ExperimentSpec.load(cfg).spec_hash() == s.spec_hash()

    def test_sweep_and_schedules(self):
        s = spec(scaling={"sweep": [64, 128], "kappa": 1 / 7})
        assert [p.N for p in s.plans()] == [64, 128]
        plan = ScalingPlan.strict(64)
        lig = spec(schedule={"liggett": 0.3}).schedule_for(plan)
        assert lig == liggett_rates(plan.p, plan.sigma, 0.3, 0.3)
        with pytest.raises(ConfigError):
            spec(schedule={"liggett": 0.3}).schedule_for()
        with pytest.raises(ConfigError):
            spec(schedule={"nothing": 1}).schedule_for()
        recs = RateSchedule((0.0, 0.5), ((1, 1, 1, 1), (2, 1, 1, 2))).to_records()
        assert spec(schedule={"records": recs}).schedule_for().breakpoints == (0.0, 0.5)

    def test_initial_from_file(self, tmp_path):
        f = GridField(np.linspace(0.1, 0.9, 20))
        path = write_field(tmp_path / "u0.csv", f)
        s = spec(initial={"file": str(path)})
        assert s.initial_field(20).values == pytest.approx(f.values)
        assert read_field_csv(path).values == pytest.approx(f.values)


class TestCompare:
    def fields(self, vals, times=(0.0, 0.5, 1.0)):
        return SpaceTimeField(np.array(times), np.tile(vals, (len(times), 1)))

    def test_identical(self):
        a = self.fields(np.random.default_rng(0).random(30))
        tab = compare(a, a)
        assert np.all(tab.l1 == 0) and np.all(tab.l2 == 0) and tab.l1_mean == 0

    def test_one_vs_zero(self):
        tab = compare(self.fields(np.ones(10)), self.fields(np.zeros(10)))
        assert tab.l1 == pytest.approx(1.0) and tab.l1_mean == pytest.approx(1.0)
        assert tab.rows()[-1][0] == "time-average"

    def test_no_overlap(self):
        with pytest.raises(ValueError):
            compare(self.fields(np.ones(4), (0.0, 1.0)), self.fields(np.ones(4), (0.5,)))

    def test_partial_overlap(self):
        tab = compare(self.fields(np.ones(4), (0.0, 0.5, 1.0)), self.fields(np.ones(4), (0.5, 2.0)))
        assert tab.times.tolist() == [0.5]


class TestRuns:
    def test_solver_only_riemann(self, tmp_path):
        m = run_experiment(spec(), tmp_path)
        assert m.results["l1_to_riemann_exact"] <= 0.01
        assert set(m.files) == {"spacetime.csv", "final.csv"}
        assert (tmp_path / "spacetime.csv").read_text().splitlines()[0] == "t,x_center,u"
        loaded = RunManifest.load(tmp_path / "manifest.json")
        assert loaded.comparable() == m.comparable()

    def test_hydrodynamic_deterministic(self, tmp_path):
        s = spec(mode="hydrodynamic", scaling={"sweep": [32, 64], "kappa": 1 / 7},
                 schedule={"densities": [0.8, 0.2]}, initial={"riemann": [0.8, 0.2]},
                 T=0.2, replicas=3, samples=10, M=64, seed=5)
        a = run_experiment(s, tmp_path / "a")
        b = run_experiment(s.replace(threads=2), tmp_path / "b")
        assert a.comparable() == b.comparable()
        for name in a.files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert set(a.results["l1_time_average"]) == {"32", "64"}
        assert len(a.seeds) == 6 and len(set(a.seeds.values())) == 6
        c = run_experiment(s.replace(seed=6), tmp_path / "c")
        assert c.files["ensemble_N64.csv"] != a.files["ensemble_N64.csv"]

    def test_quasi_static_skips_critical_times(self, tmp_path):
        sched = {"records": [{"t_start": 0.0, "alpha": 0.3, "beta": 0.3, "gamma": 0.7,
                              "delta": 0.7},
                             {"t_start": 0.05, "alpha": 0.9, "beta": 0.1, "gamma": 0.1,
                              "delta": 0.9}]}
        s = spec(mode="quasi-static", scaling=SMALL_PLAN, schedule=sched,
                 initial={"constant": 0.5}, T=0.1, replicas=2, samples=10, M=32)
        m = run_experiment(s, tmp_path)
        times = {float(r["t"]) for r in read_rows(tmp_path / "distances.csv")}
        assert min(times) >= 0.05
        assert m.complete

    def test_stationary_small(self, tmp_path):
        s = spec(mode="stationary", scaling=SMALL_PLAN, schedule={"liggett": 0.5},
                 initial={"constant": 0.5}, T=1.0, replicas=4, samples=20)
        m = run_experiment(s, tmp_path)
        row = read_rows(tmp_path / "stationary_summary.csv")[0]
        assert float(row["rho_minus"]) == 0.5 and float(row["se"]) > 0
        assert 0 < m.results["bulk_density"]["32"]["mean"] < 1

    def test_phase_scan_consistent(self, tmp_path):
        s = spec(mode="phase-scan", replicas=0, initial={"constant": 0.5}, T=2.0, M=100,
                 phase_grid={"rho_minus": [0.2, 0.7], "rho_plus": [0.3, 0.8]})
        run_experiment(s, tmp_path)
        rows = read_rows(tmp_path / "phase_diagram.csv")
        assert len(rows) == 4
        for r in rows:
            q = quasi_stationary_profile(float(r["rho_minus"]), float(r["rho_plus"]))
            assert r["phase"] == q.phase
            assert (r["u_bar"] == "") == (q.u_bar is None)
            if q.u_bar is not None:
                assert float(r["u_bar"]) == q.u_bar

    def test_diagnostics_small(self, tmp_path):
        s = spec(mode="diagnostics", scaling={"N": 64, "sigma": 8.0, "sigma_tilde": 64.0,
                                              "K": 8},
                 schedule={"densities": [0.6, 0.3]}, initial={"constant": 0.5}, T=0.2,
                 replicas=3, samples=10, M=50,
                 diagnostics={"K": [2, 8], "auxiliary_weights": [[1000, 100]]})
        run_experiment(s, tmp_path)
        names = {r["check"] for r in read_rows(tmp_path / "diagnostics.csv")}
        assert {"one_block_residual_decreases_in_K", "boundary_residual_decreases_in_sigma_tilde",
                "auxiliary_weight_total_variation", "otto_integral_inequality"} <= names

    def test_budget_flushes_partial(self, tmp_path):
        s = spec(mode="hydrodynamic", scaling={"N": 64, "kappa": 1 / 7},
                 schedule={"densities": [0.8, 0.2]}, initial={"constant": 0.5},
                 T=1.0, replicas=2, samples=5, M=32, budget=100)
        with pytest.raises(RunIncomplete) as info:
            run_experiment(s, tmp_path)
        assert not info.value.manifest.complete
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["complete"] is False and any("budget" in n for n in man["notes"])
        assert any(k.startswith("partial_") for k in man["files"])


class TestEnsembleAlgebra:
    def test_reorder_invariant(self):
        plan = ScalingPlan.explicit(40, 4.0, 40.0, 5)
        recs = run_ensemble(0.4, RateSchedule.from_densities(0.6, 0.3), plan, 0.2, 6, 2,
                            sample_times=np.linspace(0, 0.2, 5))
        a = ensemble_smoothed(recs, 5).values
        for perm in ([5, 4, 3, 2, 1, 0], [2, 0, 5, 1, 3, 4]):
            assert np.array_equal(a, ensemble_smoothed([recs[i] for i in perm], 5).values)

    def test_one_sided_tests(self):
        rng = np.random.default_rng(0)
        x = rng.normal(0, 1, 50)
        assert paired_smaller(x - 1, x)[2]
        assert not paired_smaller(x + 1, x)[2]
        assert welch_smaller(rng.normal(0, 1, 50), rng.normal(2, 1, 50))[2]
        assert not welch_smaller(rng.normal(0, 1, 50), rng.normal(0, 1, 50) - 1)[2]


class TestCli:
    def test_solve_exit_ok(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["--config", str(cfg), "solve"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["results"]["l1_to_riemann_exact"] <= 0.01
        assert (tmp_path / "out" / "manifest.json").is_file()

    def test_flags_after_subcommand(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o2"),
                     "--seed", "9"]) == 0
        man = json.loads((tmp_path / "o2" / "manifest.json").read_text())
        assert man["spec"]["seed"] == 9

    def test_config_errors(self, tmp_path, capsys):
        assert main(["solve"]) == 2
        assert main(["--config", str(tmp_path / "missing.yaml"), "solve"]) == 2
        bad = tmp_path / "bad.yaml"
        bad.write_text("mode: [unclosed")
        assert main(["--config", str(bad), "solve"]) == 2
        cfg = write_config(tmp_path)
        assert main(["--config", str(cfg), "simulate"]) == 2  # solver-only is not a simulation
        assert "config error" in capsys.readouterr().err

    def test_validate_config(self, tmp_path, capsys):
        cfg = write_config(tmp_path, scaling={"sweep": [128, 256]}, mode="hydrodynamic")
        assert main(["--config", str(cfg), "validate-config"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["valid"] and out["N"] == [128, 256]

    def test_budget_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, mode="hydrodynamic", scaling={"N": 64, "kappa": 1 / 7},
                           schedule={"densities": [0.8, 0.2]}, T=1.0, replicas=1, samples=5,
                           budget=50)
        assert main(["--config", str(cfg), "simulate"]) == 3

    def test_compare_command(self, tmp_path, capsys):
        a = write_field(tmp_path / "a.csv", GridField(np.ones(8)))
        b = write_field(tmp_path / "b.csv", GridField(np.zeros(16)))
        assert main(["compare", str(a), str(b), "--out", str(tmp_path)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[-1].startswith("time-average,1.0")
        assert (tmp_path / "compare.csv").is_file()

    def test_module_entry_point(self, tmp_path):
        import subprocess
        import sys
        cfg = write_config(tmp_path)
        r = subprocess.run([sys.executable, "-m", "asep_hydro", "--config", str(cfg),
                            "validate-config"], capture_output=True, text=True)
        assert r.returncode == 0 and '"valid": true' in r.stdout
