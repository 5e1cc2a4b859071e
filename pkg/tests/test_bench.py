import json

import numpy as np
import pytest

from civa.bench import experiment as E
from civa.bench.cli import main
from civa.bench.experiment import (
    PLOT_METRICS,
    SUMMARY_HEADER,
    AlgorithmSpec,
    ExperimentConfig,
    derive_seed,
    emit_plot_data,
    run_experiment,
)
from civa.bench.verify import format_table, gradient_errors, run_checks
from civa.constraints import grad_j_ref
from civa.core import random_init
from civa.errors import ConfigError
from civa.hybrid import HybridConfig, generate_hybrid
from civa.io import read_matrix, read_stack
from civa.iva_g import SolverSettings
from civa.report import RunReport
from civa.solver import solve


def small_config(tmp_path=None, **kw):
    base = dict(
        hybrid=HybridConfig(N=3, K=3, V=800, M=2),
        algorithms=[AlgorithmSpec("iva-g-v"), AlgorithmSpec("tf-civa")],
        sweep_axis="K",
        sweep_values=[2, 3],
        runs_per_point=2,
        seed=5,
        solver=SolverSettings(max_iters=60),
        output_dir=str(tmp_path) if tmp_path else None,
        record_runtime=False,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestSeeds:
    def test_stable_value(self):
        assert derive_seed(0, "init", 5, 1) == derive_seed(0, "init", 5, 1)
        assert derive_seed(1, "init", 5, 1) == derive_seed(0, "init", 5, 1) + 1

    def test_distinct_parts(self):
        seeds = {derive_seed(0, "init", v, r) for v in range(10) for r in range(10)}
        assert len(seeds) == 100
        assert 0 <= derive_seed(2**63 - 1, "x") < 2**63


class TestConfig:
    def test_dict_forms(self):
        cfg = ExperimentConfig.from_dict({
            "sweep": {"axis": "M", "values": [1, 2]},
            "seeds": 9,
            "hybrid": {"N": 3, "K": 2, "V": 300},
            "algorithms": ["ar-civa", {"variant": "tf-civa", "lam": 2.0, "label": "tf2"}],
        })
        assert cfg.sweep_axis == "M" and cfg.seed == 9
        assert [a.label for a in cfg.algorithms] == ["ar-civa", "tf2"]
        assert cfg.algorithms[1].regularizer().lam == 2.0

    def test_toml_and_json_agree(self, tmp_path):
        toml = tmp_path / "c.toml"
        toml.write_text('sweep_axis = "K"\nsweep_values = [2]\nseed = 3\n[hybrid]\nN = 3\nV = 400\n')
        js = tmp_path / "c.json"
        js.write_text(json.dumps({"sweep_axis": "K", "sweep_values": [2], "seed": 3, "hybrid": {"N": 3, "V": 400}}))
        assert ExperimentConfig.load(toml).to_dict() == ExperimentConfig.load(js).to_dict()

    @pytest.mark.parametrize("name", ["smoke", "k_sweep", "m_sweep"])
    def test_shipped_configs_load(self, name):
        from pathlib import Path

        path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.toml"
        cfg = ExperimentConfig.load(path)
        assert cfg.points

    @pytest.mark.parametrize(
        "d",
        [
            {"sweep_axis": "V", "sweep_values": [1]},
            {"sweep_axis": "K", "sweep_values": []},
            {"runs_per_point": 0},
            {"threads": 0},
            {"algorithms": []},
            {"algorithms": ["mystery"]},
            {"solver": {"tol": 0.0}},
            {"solver": {"eta0": -1}},
            {"sweep_axis": "M", "sweep_values": [30], "hybrid": {"N": 4, "K": 2, "V": 100}},
            {"colour": "blue"},
        ],
    )
    def test_invalid(self, d):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(d)

    def test_constraint_overrides(self):
        spec = AlgorithmSpec("ar-civa", gamma=10.0, mu_max=2.0)
        cs = spec.constraint()
        assert cs.gamma == 10.0 and cs.mu_max == 2.0
        assert AlgorithmSpec("iva-g-v").constraint() is None
        assert AlgorithmSpec("pt-civa").regularizer() is None


class TestRunExperiment:
    def test_single_point_single_row(self):
        cfg = small_config(sweep_axis="none", sweep_values=[], runs_per_point=1,
                           algorithms=[AlgorithmSpec("civa-fixed")])
        res = run_experiment(cfg)
        assert len(res.rows) == 1 and len(res.reports) == 1
        row = res.rows[0]
        assert row["sweep_value"] == "" and row["cross_joint_isi"] == 0.0
        assert set(SUMMARY_HEADER) <= set(row)

    def test_matches_standalone_solve(self):
        cfg = small_config(sweep_axis="none", sweep_values=[], runs_per_point=1,
                           algorithms=[AlgorithmSpec("pt-civa")])
        rep = run_experiment(cfg).reports[0]
        data, truth, refs = generate_hybrid(
            cfg.hybrid,
            derive_seed(5, "sources", None, 0),
            derive_seed(5, "mixing", None),
            derive_seed(5, "references"),
        )
        seed = derive_seed(5, "init", None, 0)
        alone = solve("pt-civa", data, refs, SolverSettings(max_iters=60, seed=seed),
                      init=random_init(3, 3, seed))
        np.testing.assert_array_equal(rep.W, alone.W)
        np.testing.assert_array_equal(rep.objective_trace, alone.objective_trace)

    def test_outputs_and_determinism(self, tmp_path):
        a = run_experiment(small_config(tmp_path / "a"))
        b = run_experiment(small_config(tmp_path / "b", threads=2))
        for name in ["summary.csv", "aggregate.csv"] + [f"plots/{m}.dat" for m in PLOT_METRICS]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        assert len(a.rows) == 2 * 2 * 2
        header = (tmp_path / "a" / "summary.csv").read_text().splitlines()[0]
        assert header.split(",") == SUMMARY_HEADER
        run = tmp_path / "a" / "runs" / "K_2" / "tf-civa_run1"
        rep = RunReport.read(run.with_suffix(".jsonl"))
        np.testing.assert_array_equal(read_stack(run.with_suffix(".W.bin"), 3), rep.W)
        assert rep.config["experiment"]["run"] == 1
        cfg = json.loads((tmp_path / "a" / "config.json").read_text())
        assert cfg["seed"] == 5

    def test_plot_values_equal_aggregates(self, tmp_path):
        res = run_experiment(small_config(tmp_path))
        table = np.loadtxt(tmp_path / "plots" / "joint_isi.dat", ndmin=2)
        head = (tmp_path / "plots" / "joint_isi.dat").read_text().splitlines()[0].split()[1:]
        assert head[:3] == ["sweep_value", "iva-g-v_mean", "iva-g-v_std"]
        for a in res.aggregate:
            row = table[table[:, 0] == a["sweep_value"]][0]
            col = head.index(f"{a['variant']}_mean")
            assert row[col] == a["joint_isi_mean"]
            vals = [r["joint_isi"] for r in res.rows
                    if r["sweep_value"] == a["sweep_value"] and r["variant"] == a["variant"]]
            assert a["joint_isi_mean"] == pytest.approx(np.mean(vals))
            assert a["joint_isi_std"] == pytest.approx(np.std(vals))
        assert sorted(p.name for p in (tmp_path / "plots").iterdir()) == sorted(f"{m}.dat" for m in PLOT_METRICS)

    def test_failed_run_is_recorded(self, monkeypatch):
        real = E._run_one

        def flaky(spec, *args):
            if spec.variant == "tf-civa":
                raise FloatingPointError("boom")
            return real(spec, *args)

        monkeypatch.setattr(E, "_run_one", flaky)
        res = run_experiment(small_config(sweep_values=[2], runs_per_point=1))
        bad = [r for r in res.rows if r["variant"] == "tf-civa"]
        assert len(bad) == 1 and np.isnan(bad[0]["joint_isi"]) and bad[0]["converged"] is False
        assert len(res.reports) == 1

    def test_fresh_sources_change_data(self):
        same = run_experiment(small_config(sweep_values=[2], algorithms=[AlgorithmSpec("iva-g-v")]))
        fresh = run_experiment(small_config(sweep_values=[2], algorithms=[AlgorithmSpec("iva-g-v")],
                                            fresh_sources=True))
        assert same.rows[0]["joint_isi"] == fresh.rows[0]["joint_isi"]
        assert same.rows[1]["joint_isi"] != fresh.rows[1]["joint_isi"]

    def test_empty_plot_data(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plot_data([], tmp_path)


class TestVerify:
    def test_all_checks_pass(self):
        results = run_checks()
        assert len(results) == 8
        assert all(r.passed for r in results), format_table(results)

    def test_sign_error_is_caught(self):
        bad = {"grad_j_ref": lambda *a: -grad_j_ref(*a)}
        worst = gradient_errors(3, 0, bad)
        assert worst["tf"] > 1e-3 and worst["iva"] < 1e-6
        results = run_checks(overrides=bad)
        assert not results[0].passed and all(r.passed for r in results[1:])

    def test_table(self):
        text = format_table(run_checks(checks=[("x", lambda: (True, "fine")), ("y", lambda: 1 / 0)]))
        lines = text.splitlines()
        assert "PASS" in lines[1] and "FAIL" in lines[2] and "ZeroDivisionError" in lines[2]


class TestCLI:
    def test_simulate_run_metrics(self, tmp_path, capsys):
        d = tmp_path / "sim"
        assert main(["simulate", "--n", "3", "--k", "2", "--v", "600", "--m", "2", "--seed", "1", "--out", str(d)]) == 0
        meta = json.loads((d / "meta.json").read_text())
        assert meta["N"] == 3 and meta["M"] == 2 and len(meta["phi"]) == 3
        assert read_matrix(d / "references.bin").shape == (2, 600)
        assert "wrote N=3" in capsys.readouterr().out
        out = tmp_path / "run"
        assert main(["run", "--data-dir", str(d), "--variant", "tf-civa", "--lambda", "2", "--out", str(out),
                     "--max-iters", "40"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["variant"] == "tf-civa" and 0 <= summary["joint_isi"] <= 1
        rep = RunReport.read(out / "report.jsonl")
        assert rep.config["regularizer"]["lam"] == 2.0 and rep.iterations <= 40
        assert main(["metrics", "--W", str(out / "W.bin"), "--W", str(out / "W.bin"),
                     "--A", str(d / "mixing.bin"), "--n", "3"]) == 0
        m = json.loads(capsys.readouterr().out)
        assert m["joint_isi"][0] == pytest.approx(summary["joint_isi"])
        assert m["cross_joint_isi"] == pytest.approx([0.0, 0.0], abs=1e-10)

    def test_run_from_raw_files(self, tmp_path, capsys):
        d = tmp_path / "sim"
        main(["simulate", "--n", "3", "--k", "2", "--v", "500", "--out", str(d)])
        capsys.readouterr()
        assert main(["run", "--data", str(d / "data.bin"), "--refs", str(d / "references.bin"), "--n", "3",
                     "--m", "1", "--variant", "ar-civa", "--out", str(tmp_path / "r"), "--max-iters", "20"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert "joint_isi" not in summary
        with pytest.raises(SystemExit):
            main(["run", "--data", str(d / "data.bin")])

    def test_sweep(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sweep_axis": "K", "sweep_values": [2], "hybrid": {"N": 3, "V": 500, "M": 1},
                                   "solver": {"max_iters": 30}}))
        assert main(["sweep", "--config", str(cfg), "--variant", "iva-g-v", "--variant", "pt-civa",
                     "--out", str(tmp_path / "o"), "--seed", "4"]) == 0
        text = capsys.readouterr().out
        assert "pt-civa" in text and "results in" in text
        assert len((tmp_path / "o" / "summary.csv").read_text().splitlines()) == 3

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"solver": {"tol": 0}}))
        assert main(["sweep", "--config", str(cfg)]) == 2
        assert "ConfigError" in capsys.readouterr().err
        assert main(["verify", "--config", str(cfg)]) == 2

    def test_verify(self, capsys):
        assert main(["verify"]) == 0
        assert capsys.readouterr().out.count("PASS") == 8
