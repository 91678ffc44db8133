import csv
import io
import json
import subprocess
import sys

import jsonschema
import pytest

from commlab.cli import METRICS_SCHEMA, main, parse_counts, parse_pairs

EQUI_WINDOW = ["fd", "--matrix", "DiagEquidistant,D=1000", "--target", "0", "--nt", "10",
        "--ns", "20", "--procs", "2", "--ncol", "2", "--target-interval=-0.01,0.01",
        "--max-iter", "20"]


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_parse_helpers():
    assert parse_counts("2..64") == [2, 4, 8, 16, 32, 64]
    assert parse_counts("8,2,2,1") == [1, 2, 8]
    assert parse_pairs("16=3.37, 32=4.17") == {16: 3.37, 32: 4.17}


def test_help_and_version():
    for args in (["--help"], ["metrics", "--help"], ["fd", "--help"], ["--version"]):
        proc = subprocess.run([sys.executable, "-m", "commlab", *args],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout


def test_metrics_csv_ring(capsys):
    code, out, _ = run(["metrics", "--matrix", "Tridiagonal1D,D=8,periodic=1", "--np", "1,4"],
                       capsys)
    assert code == 0
    rows = rows_of(out)
    assert [r["N_p"] for r in rows] == ["1", "4"]
    assert (rows[0]["chi1"], rows[0]["chi2"], rows[0]["chi3"]) == ("0.0", "0.0", "0.0")
    assert (rows[1]["chi1"], rows[1]["chi2"], rows[1]["chi3"]) == ("1.0", "1.0", "1.0")
    assert rows[1]["family"] == "Tridiagonal1D" and rows[1]["D"] == "8"


def test_metrics_json_schema(capsys):
    code, out, _ = run(["metrics", "--matrix", "TopIns,Lx=6,Ly=6,Lz=6", "--np", "2..4",
                        "--format", "json"], capsys)
    assert code == 0
    doc = json.loads(out)
    jsonschema.validate(doc, METRICS_SCHEMA)
    assert [r["N_p"] for r in doc["rows"]] == [2, 4]


def test_metrics_closed_form_exciton(capsys):
    code, out, _ = run(["metrics", "--matrix", "Exciton,L=200", "--closed-form"], capsys)
    assert code == 0
    got = [(float(r["chi1"]), float(r["chi2"])) for r in rows_of(out)]
    assert got == [(0.0, 0.0), (0.02, 0.01), (0.04, 0.03), (0.08, 0.07), (0.16, 0.15),
                   (0.32, 0.31)]


def test_output_file_is_deterministic(tmp_path, capsys):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        assert main(["metrics", "--matrix", "Hubbard,n_sites=6,n_fermions=3", "--np", "2..8",
                     "--format", "json", "-o", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert capsys.readouterr().out == ""


def test_model_rows(capsys):
    code, out, _ = run(["model", "--matrix", "Tridiagonal1D,D=1000", "--np", "1..8",
                        "--drop-matrix-term"], capsys)
    assert code == 0
    rows = rows_of(out)
    assert float(rows[0]["speedup"]) == 1.0 and float(rows[0]["Pi_max"]) == 1.0
    assert all(float(r["efficiency"]) <= 1.0 + 1e-12 for r in rows)


def test_model_chi_values_and_params(tmp_path, capsys):
    cfg = tmp_path / "p.toml"
    cfg.write_text("bm = 53.3e9\nbc = 2.82e9\nkappa = 10\n")
    code, out, _ = run(["model", "--matrix", "Hubbard,n_sites=6,n_fermions=3", "--np", "1,16",
                        "--chi-values", "16=3.37", "--n-nzr", "14", "--params", str(cfg),
                        "--format", "json"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["params"]["kappa"] == 10.0
    assert [r["chi"] for r in doc["rows"]] == [0.0, 3.37]


def test_plan_table4_override(capsys):
    code, out, _ = run(["plan", "--procs", "32", "--override-empirical",
                        "2:1.39:1,8:1.92:2,32:4.98:4", "--chi-values", "32=4.17"], capsys)
    assert code == 0
    rows = rows_of(out)
    assert [round(float(r["S_10"]), 2) for r in rows] == [1.16, 1.37, 2.77]
    assert [round(float(r["S_100"]), 2) for r in rows] == [1.36, 1.85, 4.61]
    assert [r["n_ceil"] for r in rows] == ["6", "5", "3"]
    assert rows[-1]["pillar_always"] == "True"


def test_plan_from_matrix(capsys):
    code, out, _ = run(["plan", "--matrix", "Hubbard,n_sites=6,n_fermions=3", "--procs", "4",
                        "--format", "json"], capsys)
    assert code == 0
    rows = json.loads(out)["rows"]
    assert rows[0]["N_col"] == 1 and rows[0]["s"] == 1.0 and rows[0]["r"] == 0.0


def test_plan_pillar_flag(capsys):
    code, out, _ = run(["plan", "--matrix", "Hubbard,n_sites=6,n_fermions=3", "--procs", "16",
                        "--chi-values", "2=0.54,4=1.51,8=2.52,16=3.37", "--preset",
                        "Hubbard14"], capsys)
    assert code == 0
    rows = rows_of(out)
    assert rows[-1]["N_col"] == "16" and rows[-1]["pillar_always"] == "True"


@pytest.mark.parametrize("ncol", [1, 2, 4])
def test_simulate_ring_zero_deviation(ncol, tmp_path, capsys):
    plan = tmp_path / "plan.json"
    code, out, _ = run(["simulate", "--matrix", "Tridiagonal1D,D=64,periodic=1", "--procs",
                        "4", "--ncol", str(ncol), "--nb", "4", "--reps", "2",
                        "--dump-plan", str(plan)], capsys)
    assert code == 0
    for r in rows_of(out):
        assert float(r["relative_deviation"]) == 0.0
    assert json.loads(plan.read_text())["direction"] == "stack->panel"


def test_gen_stats_and_export(tmp_path, capsys):
    mtx = tmp_path / "a.mtx"
    code, out, _ = run(["gen", "--matrix", "Tridiagonal1D,D=10", "--mtx", str(mtx),
                        "--format", "json"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["D"] == 10 and doc["total_nnz"] == 28
    assert mtx.read_text().startswith("%%MatrixMarket")


def test_fd_equidistant_window_converges(tmp_path, capsys):
    report = tmp_path / "r.json"
    code, out, _ = run(EQUI_WINDOW + ["--search-interval=-0.02,0.02", "--report", str(report)], capsys)
    assert code == 0
    doc = json.loads(report.read_text())
    assert doc["converged"] and doc["iterations"] <= 12
    assert len(rows_of(out)) == 10


def test_fd_forced_search_exit_2(capsys):
    code, _, err = run(EQUI_WINDOW + ["--search-interval=-0.04,0.04"], capsys)
    assert code == 2
    assert "not converged" in err


def test_fd_degree_overflow_exit_2(capsys):
    code, _, err = run(["fd", "--matrix", "DiagEquidistant,D=1000", "--target", "0", "--nt",
                        "2", "--ns", "4", "--target-interval=-0.01,0.01",
                        "--search-interval=-0.0101,0.0101", "--max-degree", "64"], capsys)
    assert code == 2
    assert "degree" in err


@pytest.mark.parametrize("argv", [
    ["metrics"],
    ["metrics", "--matrix", "Nope,L=3"],
    ["metrics", "--matrix", "Exciton,L=x"],
    ["metrics", "--matrix", "Tridiagonal1D,D=8", "--np", "0"],
    ["metrics", "--matrix", "Tridiagonal1D,D=8", "--format", "xml"],
    ["metrics", "--matrix", "Hubbard,n_sites=6,n_fermions=3", "--closed-form"],
    ["plan", "--procs", "4"],
    ["plan", "--procs", "4", "--override-empirical", "2-1.3"],
    ["simulate", "--matrix", "Tridiagonal1D,D=8", "--procs", "3", "--ncol", "2"],
    ["fd", "--matrix", "Tridiagonal1D,D=30", "--target", "middle"],
    ["fd", "--matrix", "Tridiagonal1D,D=30", "--target-interval", "1,0"],
    ["model", "--matrix", "Tridiagonal1D,D=30", "--np", "1,2", "--chi-values", "4=1"],
    ["frobnicate"],
])
def test_usage_errors_exit_1(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_plot_output(tmp_path, capsys):
    png = tmp_path / "m.png"
    assert main(["metrics", "--matrix", "Tridiagonal1D,D=64", "--np", "1..8",
                 "--plot", str(png), "-o", str(tmp_path / "m.csv")]) == 0
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
