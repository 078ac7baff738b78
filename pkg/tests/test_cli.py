import subprocess
import sys

import numpy as np
import pytest

from honom import benchmarks, cli
from honom.config import build_config, parse_value, read_config, thread_limit
from honom.exceptions import ConfigError, SolveFailed
from honom.point_cloud import build_grid, write_cloud


def run(argv, capsys):
    code = cli.main(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_solve_writes_csv_field_and_log(tmp_path, capsys):
    code, out, _ = run(["solve", "--benchmark", "poisson2d", "--nodes", "9", "--order", "2",
                        "--phg", "1", "--out", str(tmp_path)], capsys)
    assert code == 0
    csv = (tmp_path / "poisson_2d_weak.csv").read_text().splitlines()
    assert csv[0] == "nnode,dx,l2,umax_ratio_err,p,phg,runtime_s"
    row = csv[1].split(",")
    assert row[0] == "81" and float(row[1]) == pytest.approx(0.125) and row[4] == "2"
    field = tmp_path / "poisson_2d_weak_n9_p2_phg1_field.txt"
    assert field.read_text().splitlines()[0] == "# x1 x2 value1"
    data = np.loadtxt(field)
    assert data.shape == (81, 3)
    assert (tmp_path / "poisson_2d_weak.log").read_text().startswith(
        "# step iter rel_increment residual_norm")
    assert csv[1] in out


def test_newton_log_format(tmp_path, capsys):
    code, _, _ = run(["solve", "--benchmark", "von_karman", "--nodes", "8", "--load-steps", "2",
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    lines = [l for l in (tmp_path / "von_karman_plate.log").read_text().splitlines()
             if not l.startswith("#")]
    assert lines
    for l in lines:
        step, it, rel, res = l.split()
        assert int(step) in (1, 2) and int(it) >= 1
        float(rel), float(res)
    assert np.loadtxt(tmp_path / "von_karman_plate_n8_p2_phg1_field.txt").shape == (64, 5)


def test_ladder_prints_rates_and_is_deterministic(tmp_path, capsys):
    args = ["ladder", "--benchmark", "ode1d", "--nodes", "11,21,41", "--orders", "2,4",
            "--no-runtime"]
    code, out, _ = run(args + ["--out", str(tmp_path / "a")], capsys)
    assert code == 0
    assert "rate p=2 phg=0:" in out and "rate p=4 phg=0:" in out
    run(args + ["--out", str(tmp_path / "b")], capsys)
    a = (tmp_path / "a" / "ode_1d.csv").read_bytes()
    assert a == (tmp_path / "b" / "ode_1d.csv").read_bytes()
    assert len(a.splitlines()) == 7 and a.splitlines()[1].endswith(b",nan")


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# weak poisson\nbenchmark = poisson2d\nnodes = 7\norder = 1\n"
                   "phg = 1  # penalty\nout = " + str(tmp_path / "o") + "\n")
    code, _, _ = run(["solve", "--config", str(cfg), "--nodes", "9"], capsys)
    assert code == 0
    assert (tmp_path / "o" / "poisson_2d_weak.csv").read_text().splitlines()[1].startswith("81,")


@pytest.mark.parametrize("argv", [
    ["solve"],
    ["solve", "--benchmark", "nope"],
    ["solve", "--benchmark", "ode1d", "--nodes", "2"],
    ["solve", "--benchmark", "ode1d", "--order", "1"],
    ["solve", "--benchmark", "ode1d", "--nodes", "x"],
    ["solve", "--benchmark", "ode1d", "--weight", "tent"],
    ["solve", "--benchmark", "ode1d", "--nodes", "11,21"],
    ["solve", "--benchmark", "ode1d", "--config", "/nonexistent.cfg"],
    ["validate", "--benchmark", "ode1d", "--nodes", "2"],
    ["frobnicate"],
])
def test_config_errors_exit_2(argv, tmp_path, capsys):
    code, _, err = run(argv + ["--out", str(tmp_path)] if len(argv) > 1 else argv, capsys)
    assert code == cli.EXIT_CONFIG
    assert "honom" in err or "error:" in _


def test_solve_failed_exits_3(tmp_path, capsys, monkeypatch):
    def boom(system):
        raise SolveFailed("structurally singular")

    monkeypatch.setattr(benchmarks, "solve_linear", boom)
    code, _, err = run(["solve", "--benchmark", "ode1d", "--nodes", "11", "--out", str(tmp_path)],
                       capsys)
    assert code == cli.EXIT_SOLVE_FAILED and "SolveFailed" in err


def test_no_convergence_exits_4(tmp_path, capsys):
    code, _, err = run(["solve", "--benchmark", "von_karman", "--nodes", "8", "--max-iter", "1",
                        "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_NO_CONVERGENCE and "NoConvergence" in err
    # the log written so far is kept
    assert (tmp_path / "von_karman_plate.log").exists()


def test_singular_support_exits_5(tmp_path, capsys):
    code, _, err = run(["solve", "--benchmark", "poisson2d", "--nodes", "9", "--order", "2",
                        "--neighbors", "3", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_NUMERICAL and "SingularSupport" in err


def test_validate_reports(tmp_path, capsys):
    code, out, _ = run(["validate", "--benchmark", "poisson3d"], capsys)
    assert code == 0 and out.strip().endswith("ok") and "MiB" in out
    code, out, _ = run(["validate", "--benchmark", "ode1d", "--neighbors", "1"], capsys)
    assert "warning:" in out
    cloud = build_grid([0, 0], [1, 1], [6, 6])
    cloud.boundary_tags = [frozenset(t - {"ymax"}) for t in cloud.boundary_tags]
    path = tmp_path / "c.txt"
    write_cloud(path, cloud)
    code, out, _ = run(["validate", "--benchmark", "poisson2d_strong", "--cloud", str(path)],
                       capsys)
    assert code == cli.EXIT_CONFIG and "ymax" in out


def test_custom_cloud_solve(tmp_path, capsys):
    path = tmp_path / "c.txt"
    write_cloud(path, build_grid([0, 0], [1, 1], [11, 11], perturbation=0.3, seed=4))
    code, out, _ = run(["solve", "--benchmark", "poisson2d_strong", "--cloud", str(path),
                        "--order", "3", "--out", str(tmp_path)], capsys)
    assert code == 0 and "121," in out


def test_nom_threads(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("NOM_THREADS", "2")
    assert thread_limit() == 2
    code, _, _ = run(["ladder", "--benchmark", "ode1d", "--nodes", "11,21", "--out",
                      str(tmp_path)], capsys)
    assert code == 0
    monkeypatch.setenv("NOM_THREADS", "zero")
    code, _, err = run(["validate", "--benchmark", "ode1d"], capsys)
    assert code == cli.EXIT_CONFIG and "NOM_THREADS" in err
    monkeypatch.setenv("NOM_THREADS", "0")
    with pytest.raises(ConfigError):
        thread_limit()
    monkeypatch.delenv("NOM_THREADS")
    assert thread_limit() is None


def test_config_parsing(tmp_path):
    assert parse_value("order", "2,3") == ("orders", (2, 3))
    assert parse_value("p_hg", "0.5") == ("phg", (0.5,))
    assert parse_value("penalty", "default") == ("penalty", None)
    with pytest.raises(ConfigError):
        parse_value("colour", "red")
    with pytest.raises(ConfigError):
        parse_value("runtime", "maybe")
    p = tmp_path / "x.cfg"
    p.write_text("benchmark poisson2d\n")
    with pytest.raises(ConfigError, match="key = value"):
        read_config(p)
    cfg = build_config({"benchmark": "ode1d", "tol": 1e-6}, {"tol": 1e-9, "seed": None})
    assert cfg.tol == 1e-9 and cfg.seed == 0
    for bad in ({"perturb": 1.0}, {"tol": 0.0}, {"phg": (-1.0,)}, {"max_iter": 0}):
        with pytest.raises(ConfigError):
            build_config({"benchmark": "ode1d"}, bad)


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "honom", "validate", "--benchmark", "ode1d"],
                       capture_output=True, text=True, cwd=tmp_path)
    assert r.returncode == 0 and r.stdout.strip().endswith("ok")
