import json
import subprocess
import sys

import numpy as np
import pytest

from ivintegral.cli import main
from ivintegral.estimation import build_kernel, build_rhs
from ivintegral.io import (
    DataFormatError,
    read_kernel_csv,
    read_rhs_csv,
    read_samples_csv,
    read_theta_csv,
    write_kernel_csv,
    write_rhs_csv,
    write_samples_csv,
)
from ivintegral.model import SampleSet, draw_sample_set, scenario_s1


def write_config(tmp_path, n=20_000, seed=7, **extra):
    cfg = {
        "scenario": scenario_s1().to_dict(),
        "n_per_level": n,
        "seed": seed,
        "grid": {"j_points": 201, "pad_fraction": 0.1},
        "solver": {"penalty": "second-difference", "lambda": "auto:discrepancy"},
        "output": str(tmp_path / "run"),
        "validate": {"rate_n": 200_000, "condition_n": 20_000},
        **extra,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    for cmd in ("simulate", "estimate", "solve", "report"):
        assert run(cmd, "--config", cfg, "--quiet") == 0
    return tmp, cfg


class TestPipeline:
    def test_theta_has_grid_rows(self, finished_run):
        tmp, _ = finished_run
        x, theta = read_theta_csv(tmp / "run" / "theta.csv")
        assert x.shape == theta.shape == (201,)
        assert np.all(np.diff(x) > 0)

    def test_solution_json(self, finished_run):
        tmp, _ = finished_run
        sol = json.loads((tmp / "run" / "solution.json").read_text())
        assert sol["seed"] == 7 and len(sol["config_hash"]) == 16
        assert sol["lambda"] > 0 and sol["lambda_method"] == "discrepancy"
        assert sol["penalty_kind"] == "second-difference"
        assert sorted(sol["singular_values"], reverse=True) == sol["singular_values"]

    def test_report_files(self, finished_run):
        tmp, _ = finished_run
        lines = (tmp / "run" / "plotdata.csv").read_text().splitlines()
        assert lines[1] == "x,theta_hat,theta_true" and len(lines) == 203
        assert "rel_l2 (central 80%)" in (tmp / "run" / "summary.txt").read_text()

    def test_validate_reports_forward_consistency(self, finished_run):
        tmp, cfg = finished_run
        code = run("validate", "--config", cfg, "--quiet")
        report = json.loads((tmp / "run" / "report.json").read_text())
        assert code == (0 if report["all_passed"] else 3)
        assert report["mandatory"]["forward_consistency"] is True
        assert set(report["mandatory"]) == {
            "forward_consistency", "antiderivative_identity", "condition_3",
            "condition_5", "condition_6", "rate_sigma", "rate_phi",
        }

    def test_estimate_from_user_samples(self, finished_run, tmp_path):
        src, _ = finished_run
        code = run("estimate", "--samples", src / "run" / "samples.csv", "--out", tmp_path, "--quiet")
        assert code == 0
        assert (tmp_path / "kernel.csv").read_bytes() != b""
        assert read_kernel_csv(tmp_path / "kernel.csv").shape == (8, 201)


def test_simulate_is_deterministic(tmp_path):
    cfg = write_config(tmp_path, n=2000)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "a", "--quiet") == 0
    assert run("simulate", "--config", cfg, "--out", tmp_path / "b", "--quiet") == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()
    assert run("simulate", "--config", cfg, "--out", tmp_path / "c", "--seed", "8", "--quiet") == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() != (tmp_path / "c" / "samples.csv").read_bytes()


class TestExitCodes:
    def test_zero_kernel_is_numerical(self, tmp_path, capsys):
        ss = draw_sample_set(scenario_s1(), 500, 1)
        x0, y0 = ss.groups[0.0]
        dup = SampleSet("t", 1, {0.0: (x0, y0), 1.0: (x0.copy(), y0 + 1.0)}, 500)
        write_kernel_csv(build_kernel(dup, np.linspace(-3, 3, 41)), tmp_path / "kernel.csv")
        write_rhs_csv(build_rhs(dup), tmp_path / "rhs.csv")
        assert run("solve", "--out", tmp_path) == 3
        assert "degenerate instrument" in capsys.readouterr().err

    def test_bad_csv_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "samples.csv"
        bad.write_text("z,x,y\n0,1,2\n0,abc,3\n")
        assert run("estimate", "--samples", bad, "--out", tmp_path) == 2
        assert f"{bad}:3" in capsys.readouterr().err

    def test_missing_file_is_data_error(self, tmp_path):
        assert run("solve", "--out", tmp_path) == 2

    def test_unknown_command_is_usage(self):
        with pytest.raises(SystemExit) as info:
            run("frobnicate")
        assert info.value.code == 1

    def test_bad_lambda_is_usage(self, tmp_path):
        cfg = write_config(tmp_path, solver={"lambda": "auto:gcv"})
        assert run("solve", "--config", cfg) == 1

    def test_simulate_without_scenario_is_usage(self, tmp_path):
        assert run("simulate", "--out", tmp_path) == 1

    def test_console_script_module(self, tmp_path):
        res = subprocess.run(
            [sys.executable, "-m", "ivintegral.cli", "--help"], capture_output=True, text=True
        )
        assert res.returncode == 0 and "simulate" in res.stdout


class TestRoundTrips:
    def test_samples(self, tmp_path):
        ss = draw_sample_set(scenario_s1(), 300, 3)
        write_samples_csv(ss, tmp_path / "s.csv", {"seed": 3, "baseline_z": 0.0})
        back = read_samples_csv(tmp_path / "s.csv")
        assert back.levels == ss.levels and back.n_per_level == 300 and back.seed == 3
        for z in ss.levels:
            assert np.array_equal(back.x(z), ss.x(z)) and np.array_equal(back.y(z), ss.y(z))

    def test_unbalanced_samples(self, tmp_path):
        (tmp_path / "s.csv").write_text("z,x,y\n0,1,2\n0,2,3\n1,0.5,1\n")
        back = read_samples_csv(tmp_path / "s.csv")
        assert back.n_per_level is None and back.levels == (0.0, 1.0)

    def test_kernel_and_rhs(self, tmp_path):
        ss = draw_sample_set(scenario_s1(), 300, 3)
        K = build_kernel(ss, np.linspace(-3, 3, 17))
        r = build_rhs(ss)
        write_kernel_csv(K, tmp_path / "k.csv", {"seed": 3})
        write_rhs_csv(r, tmp_path / "r.csv")
        K2, r2 = read_kernel_csv(tmp_path / "k.csv"), read_rhs_csv(tmp_path / "r.csv")
        assert np.array_equal(K2.entries, K.entries) and np.array_equal(K2.x_grid, K.x_grid)
        assert K2.z_levels == K.z_levels
        assert np.array_equal(r2.values, r.values) and np.array_equal(r2.noise_scale, r.noise_scale)

    def test_bad_header(self, tmp_path):
        (tmp_path / "r.csv").write_text("z,value\n1,2\n")
        with pytest.raises(DataFormatError, match="header"):
            read_rhs_csv(tmp_path / "r.csv")
