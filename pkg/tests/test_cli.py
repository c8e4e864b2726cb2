"""End-to-end checks of the command line interface.

Most tests drive main() in process for speed; one subprocess test proves
the module entry point and the thread-count env guard work from a cold
start.
"""

import json
import os
import subprocess
import sys

import pytest

from qhfilters import cli
from qhfilters.config import from_toml


def run_cli(*argv):
    return cli.main(list(argv))


def write_config(path, body):
    path.write_text(body, encoding="utf-8")
    return str(path)


# print-config ---------------------------------------------------------------


def test_print_config_round_trips(tmp_path, capsys):
    assert run_cli("print-config") == 0
    text = capsys.readouterr().out
    cfg_path = tmp_path / "template.toml"
    cfg_path.write_text(text, encoding="utf-8")
    config = from_toml(str(cfg_path))
    assert config.meshes
    assert config.frequencies
    assert set(config.formulations) <= {
        "plain",
        "loop-star",
        "filtered-ls",
        "qh-projectors",
        "filtered-qh",
    }


# decompose ------------------------------------------------------------------


def test_decompose_reports_ranks_on_a_tetrahedron(tmp_path, capsys):
    out = tmp_path / "dec"
    assert run_cli("decompose", "--mesh", "tetrahedron", "--out", str(out)) == 0
    report = json.loads((out / "decompose_report.json").read_text())
    assert report["rank_sigma"] == 3
    assert report["rank_lambda"] == 3
    assert report["harmonic_dim"] == 0
    assert report["edges"] == 6
    assert "rank(Sigma) = 3" in capsys.readouterr().out


def test_decompose_writes_incidence_triplets(tmp_path):
    out = tmp_path / "dec"
    run_cli("decompose", "--mesh", "tetrahedron", "--out", str(out))
    lines = (out / "sigma.txt").read_text().splitlines()
    rows, cols, nnz = (int(v) for v in lines[0].lstrip("# ").split())
    assert (rows, cols) == (6, 4)
    assert len(lines) - 1 == nnz
    values = {float(line.split()[2]) for line in lines[1:]}
    assert values <= {-1.0, 1.0}


def test_decompose_detects_handles_on_a_torus(tmp_path):
    out = tmp_path / "dec"
    code = run_cli(
        "decompose", "--mesh", "torus:8x8", "--out", str(out), "--normalized"
    )
    assert code == 0
    report = json.loads((out / "decompose_report.json").read_text())
    assert report["genus"] == 1
    assert report["harmonic_dim"] == 2
    assert report["normalized"] is True
    assert report["rank_sigma"] + report["rank_lambda"] + 2 == report["edges"]


# filter ---------------------------------------------------------------------


def test_filter_dense_backend_matches_its_own_reference(tmp_path):
    out = tmp_path / "filt"
    code = run_cli(
        "filter",
        "--mesh", "tetrahedron",
        "--side", "sigma",
        "--index", "1",
        "--backend", "svd",
        "--out", str(out),
    )
    assert code == 0
    report = json.loads((out / "filter_report.json").read_text())
    assert report["max_error_vs_svd"] == 0.0
    assert report["degenerate_cut"] is False
    assert report["dimension"] == 4


def test_filter_flags_a_cut_inside_a_multiplet(tmp_path):
    out = tmp_path / "filt"
    code = run_cli(
        "filter",
        "--mesh", "icosahedron",
        "--side", "sigma",
        "--index", "7",
        "--backend", "svd",
        "--out", str(out),
    )
    assert code == 0
    report = json.loads((out / "filter_report.json").read_text())
    assert report["degenerate_cut"] is True


def test_filter_smooth_backend_reports_its_accuracy(tmp_path):
    out = tmp_path / "filt"
    code = run_cli(
        "filter",
        "--mesh", "tetrahedron",
        "--side", "lambda",
        "--index", "1",
        "--backend", "butterworth",
        "--out", str(out),
    )
    assert code == 0
    report = json.loads((out / "filter_report.json").read_text())
    # index 1 keeps only the nullspace; the spectral gap is wide, so a
    # high-order mask reproduces the dense cut tightly
    assert report["max_error_vs_svd"] < 1e-6
    assert report["meta"]["backend"] == "butterworth"


# sweep ----------------------------------------------------------------------


SWEEP_BODY = """\
meshes = ["icosahedron"]
frequencies = [1e6]
formulations = ["plain", "filtered-qh"]
solve_during_sweep = true
output_dir = {out!r}
"""


def test_sweep_writes_identical_csv_on_rerun(tmp_path, capsys):
    first = tmp_path / "a"
    second = tmp_path / "b"
    for out in (first, second):
        cfg = write_config(
            tmp_path / f"{out.name}.toml", SWEEP_BODY.format(out=str(out))
        )
        assert run_cli("sweep", "--config", cfg) == 0
    capsys.readouterr()
    a = (first / "sweep.csv").read_bytes()
    b = (second / "sweep.csv").read_bytes()
    assert a == b
    header = a.decode().splitlines()[0]
    assert header == "mesh,h_avg,size,frequency,formulation,cond,isolated_excluded,iterations"


def test_sweep_rows_show_the_preconditioner_working(tmp_path, capsys):
    out = tmp_path / "run"
    cfg = write_config(tmp_path / "run.toml", SWEEP_BODY.format(out=str(out)))
    assert run_cli("sweep", "--config", cfg) == 0
    lines = (out / "sweep.csv").read_text().splitlines()[1:]
    by_form = {line.split(",")[4]: line.split(",") for line in lines}
    cond_plain = float(by_form["plain"][5])
    cond_q = float(by_form["filtered-qh"][5])
    assert cond_q < cond_plain / 100
    assert int(by_form["filtered-qh"][7]) <= int(by_form["plain"][7])


# solve ----------------------------------------------------------------------


def test_solve_writes_a_report_per_grid_cell(tmp_path, capsys):
    out = tmp_path / "run"
    cfg = write_config(tmp_path / "run.toml", SWEEP_BODY.format(out=str(out)))
    assert run_cli("solve", "--config", cfg) == 0
    names = sorted(p.name for p in out.glob("solve_*.json"))
    assert names == [
        "solve_icosahedron_1e+06_filtered-qh.json",
        "solve_icosahedron_1e+06_plain.json",
    ]
    plain = json.loads((out / names[1]).read_text())
    fast = json.loads((out / names[0]).read_text())
    assert plain["converged"] and fast["converged"]
    assert fast["iterations"] < plain["iterations"]
    assert len(plain["coefficients_real"]) == 30
    assert len(plain["coefficients_imag"]) == 30
    assert fast["variant"] == "qh-filters"
    assert fast["scaling"]["b_sigma"] > 0


def test_solve_partial_report_survives_a_budget_failure(tmp_path, capsys):
    out = tmp_path / "run"
    cfg = write_config(
        tmp_path / "tight.toml",
        SWEEP_BODY.format(out=str(out)).replace(
            'formulations = ["plain", "filtered-qh"]',
            'formulations = ["plain"]\nsolver_max_iter = 2',
        ),
    )
    assert run_cli("solve", "--config", cfg) == 5
    capsys.readouterr()
    report = json.loads((out / "solve_icosahedron_1e+06_plain.json").read_text())
    assert report["converged"] is False
    assert report["iterations"] == 2
    assert report["residual"] > 0


# failure exit codes ---------------------------------------------------------


def test_missing_config_exits_with_config_code(tmp_path, capsys):
    assert run_cli("sweep", "--config", str(tmp_path / "nope.toml")) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_config_key_exits_with_config_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.toml", 'meshes = ["tetrahedron"]\nbogus = 1\n')
    assert run_cli("sweep", "--config", cfg) == 2
    assert "bogus" in capsys.readouterr().err


def test_missing_mesh_file_exits_with_mesh_code(tmp_path, capsys):
    path = str(tmp_path / "gone.obj")
    assert run_cli("decompose", "--mesh", path, "--out", str(tmp_path)) == 3
    assert "mesh error" in capsys.readouterr().err


def test_unknown_builtin_exits_with_mesh_code(tmp_path, capsys):
    assert run_cli("decompose", "--mesh", "klein-bottle", "--out", str(tmp_path)) == 3
    capsys.readouterr()


def test_invalid_filter_index_exits_with_numeric_code(tmp_path, capsys):
    code = run_cli(
        "filter",
        "--mesh", "tetrahedron",
        "--side", "sigma",
        "--index", "0",
        "--out", str(tmp_path),
    )
    assert code == 4
    assert "numerical failure" in capsys.readouterr().err


def test_unknown_subcommand_exits_with_usage_code(capsys):
    with pytest.raises(SystemExit) as err:
        run_cli("frobnicate")
    assert err.value.code == 2
    capsys.readouterr()


# cold-start entry point -----------------------------------------------------


def test_module_entry_point_and_thread_guard():
    env = dict(os.environ, QHFILTERS_THREADS="1")
    ok = subprocess.run(
        [sys.executable, "-m", "qhfilters.cli", "print-config"],
        capture_output=True, text=True, env=env,
    )
    assert ok.returncode == 0
    assert "meshes" in ok.stdout

    env["QHFILTERS_THREADS"] = "zero"
    bad = subprocess.run(
        [sys.executable, "-m", "qhfilters.cli", "print-config"],
        capture_output=True, text=True, env=env,
    )
    assert bad.returncode == 1
    assert "QHFILTERS_THREADS" in bad.stderr
