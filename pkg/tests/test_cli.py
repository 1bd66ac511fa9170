import csv
import io
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from mixshrink import MixtureParams
from mixshrink.cli import (
    SEED_ENV,
    TableRow,
    format_table,
    main,
    read_table,
    simulation_tables,
    write_table,
)
from mixshrink.evaluation import generate_collinear_design, generate_mixture_responses, load_spec_document


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    return path


@pytest.fixture
def generator_csv(tmp_path):
    rng = np.random.default_rng(2)
    Z = generate_collinear_design(200, 4, 0.95, rng)
    X = np.column_stack([np.ones(200), Z])
    truth = MixtureParams([0.7, 0.3], [[1, 3, 4, 5, 6], [-1, -1, -2, -3, -5]], [1.0, 1.0])
    y, _ = generate_mixture_responses(X, truth, rng)
    return write_csv(tmp_path / "gen.csv", ["y", "x1", "x2", "x3", "x4"],
                     np.column_stack([y, Z]))


@pytest.fixture
def noiseless_csv(tmp_path):
    rng = np.random.default_rng(3)
    Z = rng.standard_normal((30, 2))
    y = 1.0 + Z @ [2.0, -1.0]
    return write_csv(tmp_path / "exact.csv", ["a", "b", "target"], np.column_stack([Z, y]))


def run(capsys, *argv):
    code = main(list(map(str, argv)))
    out, err = capsys.readouterr()
    return code, out, err


class TestFit:
    def test_lt_hkp_cem_json(self, capsys, generator_csv):
        code, out, err = run(capsys, "fit", generator_csv, "--response", "y", "--method", "lt-hkp",
                             "--engine", "cem", "--components", "2", "--json")
        assert code == 0 and err == ""
        report = json.loads(out)
        assert report["n_components"] == 2 and len(report["components"]) == 2
        assert report["covariates"] == ["intercept", "x1", "x2", "x3", "x4"]
        for comp in report["components"]:
            assert len(comp["coefficients"]) == 5 and comp["k"] > 0
        assert report["stop_reason"] in {"tolerance", "max-iter", "degenerate-partition"}
        assert len(report["objective_trace"]) == report["iterations"]

    def test_single_component_is_ols(self, capsys, noiseless_csv, tmp_path):
        data = np.loadtxt(noiseless_csv, delimiter=",", skiprows=1)
        data[:, 2] += np.random.default_rng(0).standard_normal(30)
        path = write_csv(tmp_path / "noisy.csv", ["a", "b", "target"], data)
        code, out, _ = run(capsys, "fit", path, "--response", "target", "--components", "1",
                           "--method", "ml", "--json")
        assert code == 0
        X = np.column_stack([np.ones(30), data[:, :2]])
        beta, *_ = np.linalg.lstsq(X, data[:, 2], rcond=None)
        np.testing.assert_allclose(json.loads(out)["components"][0]["coefficients"], beta,
                                   rtol=1e-9)

    def test_summary_and_out_dir(self, capsys, generator_csv, tmp_path):
        code, out, _ = run(capsys, "fit", generator_csv, "--response", "y", "--out",
                           tmp_path / "res")
        assert code == 0 and "ml/em" in out and "pi=" in out
        assert json.loads((tmp_path / "res" / "fit.json").read_text())["n"] == 200

    def test_covariate_subset_without_intercept(self, capsys, generator_csv):
        code, out, _ = run(capsys, "fit", generator_csv, "--response", "y", "--covariates",
                           "x1,x3", "--no-intercept", "--json", "--components", "1")
        assert code == 0 and json.loads(out)["covariates"] == ["x1", "x3"]

    def test_floats_round_trip(self, capsys, generator_csv):
        _, out, _ = run(capsys, "fit", generator_csv, "--response", "y", "--json", "--components",
                        "1")
        text = out.split('"coefficients": [')[1].split("]")[0]
        for tok in text.split(","):
            tok = tok.strip()
            assert repr(float(tok)) == tok


class TestErrors:
    def test_missing_file(self, capsys, tmp_path):
        missing = tmp_path / "nope.csv"
        code, out, err = run(capsys, "fit", missing, "--response", "y")
        assert code != 0 and out == ""
        assert str(missing) in err and err.startswith("mixshrink: error:")

    def test_missing_response(self, capsys, generator_csv):
        code, _, err = run(capsys, "fit", generator_csv, "--response", "z")
        assert code == 1 and "'z'" in err

    def test_non_numeric_cell(self, capsys, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y,x\n1,2\n3,4\n5,abc\n6,7\n")
        code, out, err = run(capsys, "fit", p, "--response", "y")
        assert code == 1 and out == ""
        assert "line 4" in err and "'x'" in err and "abc" in err

    def test_ragged_row(self, capsys, tmp_path):
        p = tmp_path / "ragged.csv"
        p.write_text("y,x\n1,2\n3\n")
        code, _, err = run(capsys, "fit", p, "--response", "y")
        assert code == 1 and "line 3" in err

    def test_bad_seed_env(self, capsys, generator_csv, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "x")
        code, _, err = run(capsys, "fit", generator_csv, "--response", "y")
        assert code == 1 and SEED_ENV in err

    def test_bad_spec(self, capsys, tmp_path):
        doc = load_spec_document("smoke")
        doc["rho"] = 2
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(doc))
        code, out, err = run(capsys, "simulate", p)
        assert code == 1 and "rho" in err and out == ""


class TestCrossval:
    def test_byte_identical(self, capsys, generator_csv):
        args = ("crossval", generator_csv, "--response", "y", "--folds", "5", "--seed", "1",
                "--starts", "2")
        first = run(capsys, *args)
        second = run(capsys, *args)
        assert first[0] == 0 and first == second
        assert "RMSEP" in first[1]

    def test_folds_exceed_n(self, capsys, noiseless_csv):
        code, _, err = run(capsys, "crossval", noiseless_csv, "--response", "target", "--folds",
                           "31")
        assert code == 1 and "--folds" in err

    def test_noiseless_single_component(self, capsys, noiseless_csv):
        code, out, _ = run(capsys, "crossval", noiseless_csv, "--response", "target",
                           "--components", "1", "--json")
        assert code == 0 and json.loads(out)["rmsep"] < 1e-6

    def test_seed_env(self, capsys, generator_csv, monkeypatch):
        args = ("crossval", generator_csv, "--response", "y", "--starts", "1", "--json")
        monkeypatch.setenv(SEED_ENV, "4")
        via_env = json.loads(run(capsys, *args)[1])
        monkeypatch.delenv(SEED_ENV)
        via_flag = json.loads(run(capsys, *args, "--seed", "4")[1])
        default = json.loads(run(capsys, *args)[1])
        assert via_env == via_flag and via_env["seed"] == 4 and default["seed"] == 0
        # --seed wins over the environment
        monkeypatch.setenv(SEED_ENV, "9")
        assert json.loads(run(capsys, *args, "--seed", "4")[1]) == via_flag


class TestSimulate:
    def test_smoke_spec_is_fast(self, capsys, tmp_path):
        start = time.perf_counter()
        code, out, _ = run(capsys, "simulate", "smoke", "--out", tmp_path)
        assert code == 0 and time.perf_counter() - start < 5
        for metric in ("sse_beta", "sse_pi", "sse_sigma2", "rmsep"):
            assert f"== {metric} ==" in out
            with open(tmp_path / f"{metric}.csv", newline="") as fh:
                rows = read_table(fh)
            assert len(rows) == 8 and all(r.n_used + r.n_failed + r.n_excluded == 2 for r in rows)

    def test_deterministic_tables(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        run(capsys, "simulate", "smoke", "--out", a, "--replicates", "1", "--folds", "0")
        run(capsys, "simulate", "smoke", "--out", b, "--replicates", "1", "--folds", "0")
        assert (a / "sse_beta.csv").read_bytes() == (b / "sse_beta.csv").read_bytes()
        assert not (a / "rmsep.csv").exists()

    def test_sim1_has_twelve_rows_per_rho(self):
        doc = load_spec_document("paper_sim1")
        tables = simulation_tables(doc, n_replicates=1, k_folds=0, n=[60], rho=[0.9, 0.99])
        rows = tables["sse_beta"]
        assert len(rows) == 24
        for rho in (0.9, 0.99):
            cells = {(r.method, r.engine) for r in rows if r.rho == rho}
            assert len(cells) == 12


class TestTables:
    def test_round_trip(self):
        rows = [TableRow("ml", "em", "sse_beta", 0.1, 1 / 3, 2.0000000000000004, 1e-300, 60,
                         0.99, 500, 0, 3),
                TableRow("lt-hkp", "cem", "sse_beta", 12.5, 1.0, 20.0, 19.0, 100, None, 10, 1, 0)]
        buf = io.StringIO()
        write_table(rows, buf)
        buf.seek(0)
        assert read_table(buf) == rows

    def test_human_table(self):
        row = TableRow("ml", "em", "rmsep", 16.2999999, 14.0, 18.0, 4.0, 60, 0.88, 500, 0, 0)
        text = format_table([row])
        assert "16.3" in text and "16.2999999" not in text


def test_console_entry_point(tmp_path, noiseless_csv):
    proc = subprocess.run([sys.executable, "-m", "mixshrink.cli", "fit", str(noiseless_csv),
                           "--response", "target", "--components", "1", "--json"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["n_components"] == 1
    proc = subprocess.run([sys.executable, "-m", "mixshrink.cli", "fit", str(tmp_path / "x.csv"),
                           "--response", "y"], capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stdout == "" and "x.csv" in proc.stderr
