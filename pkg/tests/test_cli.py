import io
import subprocess
import sys

import pytest

from cbdc_nk.cli import OUTPUT_ENV, build_parser, main, parse_size


def run(argv, **kw):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, stdout=out, stderr=err, **kw)
    return code, out.getvalue(), err.getvalue()


def test_steady_writes_csv(tmp_path):
    code, out, err = run(["steady", "--out", str(tmp_path)])
    assert code == 0, err
    text = (tmp_path / "steady_state.csv").read_text()
    assert text == out
    rows = dict(line.split(",") for line in text.splitlines()[1:])
    assert float(rows["l"]) == pytest.approx(1 / 3, abs=1e-11)
    assert len(rows) == 43


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["irf", "--shock", "a", "--size", "pct:1", "--horizon", "12", "--out", str(d)])[0] == 0
    for name in ("irf_a.csv", "irf_a.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_irf_rows_and_overlay(tmp_path):
    code, _, err = run(["irf", "--variant", "competitive", "--out", str(tmp_path), "--no-svg"])
    assert code == 0, err
    lines = (tmp_path / "irf_lambda.csv").read_text().splitlines()
    assert len(lines) == 42
    header = lines[0].split(",")
    assert "y[baseline]" in header and "y[competitive]" in header
    assert not (tmp_path / "irf_lambda.svg").exists()


def test_svg_output(tmp_path):
    assert run(["irf", "--horizon", "8", "--out", str(tmp_path)])[0] == 0
    svg = (tmp_path / "irf_lambda.svg").read_text()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "<polyline" in svg


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert run(["steady"])[0] == 0
    assert (tmp_path / "env" / "steady_state.csv").exists()


def test_config_error_exit_2(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[calibration]\nbeta = 1.2\n")
    code, _, err = run(["steady", "--config", str(cfg), "--out", str(tmp_path)])
    assert code == 2
    assert "beta" in err


def test_argparse_error_exit_2(tmp_path):
    assert run(["irf", "--size", "huge", "--out", str(tmp_path)])[0] == 2


def test_solver_error_exit_3(tmp_path):
    cfg = tmp_path / "odd.ini"
    cfg.write_text("[calibration]\ntarget_reserve_spread_target = 0.5\n")
    code, _, err = run(["steady", "--config", str(cfg), "--out", str(tmp_path)])
    assert code == 3
    assert "solver error" in err


def test_indeterminate_exit_4(tmp_path):
    code, _, err = run(["welfare", "--bond-rule", "0,0,0", "--out", str(tmp_path)])
    assert code == 4
    assert "Blanchard-Kahn" in err


def test_simulate_seed(tmp_path):
    code, _, err = run(["simulate", "--periods", "20", "--seed", "3", "--preset", "welfare",
                        "--out", str(tmp_path)])
    assert code == 0, err
    lines = (tmp_path / "simulation_seed3.csv").read_text().splitlines()
    assert len(lines) == 21


def test_experiment_section_drives_irf(tmp_path):
    cfg = tmp_path / "exp.ini"
    cfg.write_text("[experiment]\nshock = eps\nhorizon = 5\n")
    assert run(["irf", "--config", str(cfg), "--out", str(tmp_path), "--no-svg"])[0] == 0
    assert len((tmp_path / "irf_eps.csv").read_text().splitlines()) == 7


def test_parse_size():
    assert parse_size("log:0.01") == 0.01
    assert parse_size("pct:25") == pytest.approx(0.22314355131420976)


def test_help_lists_commands():
    text = build_parser().format_help()
    for cmd in ("steady", "irf", "simulate", "welfare", "optimize", "tables"):
        assert cmd in text


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "cbdc_nk.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "tables" in res.stdout
