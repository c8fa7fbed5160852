import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from qrse_priors.cli import main
from qrse_priors.core import Grid
from qrse_priors.fitting import FitConfig
from qrse_priors.ingestion import compute_returns, synthetic_prices

from test_ingestion import FIXTURE


@pytest.fixture(scope="module")
def prices_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "prices.csv"
    synthetic_prices(n_areas=40, start="2006-01-01", end="2009-12-31", seed=4).to_csv(path, index=False)
    return path


@pytest.fixture(scope="module")
def samples_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--T", "1", "--mu", "0.5", "--rho", "4", "--gamma", "-0.2",
                 "--n", "5000", "--seed", "7", "--out", str(out)]) == 0
    return out / "samples.csv"


@pytest.fixture(scope="module")
def fit_dir(tmp_path_factory, samples_csv):
    out = tmp_path_factory.mktemp("fit")
    assert main(["fit", "--samples", str(samples_csv), "--prior", "uniform", "--out", str(out)]) == 0
    return out


def error_code(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("error: ")
    return err.split(":")[1].strip()


def manifest_lists_everything(root: Path):
    manifest = json.loads((root / "manifest.json").read_text())
    listed = {o["path"] for o in manifest["outputs"]}
    on_disk = {p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file()} - {"manifest.json"}
    return listed == on_disk


class TestIngest:
    def test_annual_files(self, tmp_path, prices_csv):
        assert main(["ingest", "--prices", str(prices_csv), "--grouping", "annual", "--out", str(tmp_path)]) == 0
        files = sorted(p.name for p in (tmp_path / "periods").iterdir())
        assert files == ["00_2006.csv", "01_2007.csv", "02_2008.csv", "03_2009.csv"]
        report = pd.read_csv(tmp_path / "grouping_report.csv")
        assert report["count"].tolist()[1:] == [160, 160, 160]
        assert manifest_lists_everything(tmp_path)

    def test_fixture_matches_module(self, tmp_path):
        pd.DataFrame(FIXTURE, columns=["date", "area", "price"]).to_csv(tmp_path / "p.csv", index=False)
        assert main(["ingest", "--prices", str(tmp_path / "p.csv"), "--grouping", "quarterly",
                     "--out", str(tmp_path / "out")]) == 0
        written = pd.read_csv(tmp_path / "out" / "returns.csv")
        assert written["return"].tolist() == [25.0, -25.0, 20.0]
        expected = compute_returns(pd.DataFrame(FIXTURE, columns=["date", "area", "price"]))
        assert written["return"].tolist() == expected["return"].tolist()

    def test_missing_file(self, tmp_path, capsys):
        assert main(["ingest", "--prices", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2
        assert error_code(capsys) == "E_INPUT_NOT_FOUND"

    def test_malformed_file(self, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("date,area,price\nnot-a-date,A,1\n")
        assert main(["ingest", "--prices", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "o")]) == 2
        assert error_code(capsys) == "E_INPUT_INVALID"


class TestSimulate:
    def test_outputs(self, samples_csv):
        truth = json.loads((samples_csv.parent / "truth.json").read_text())
        assert truth["params"]["T"] == 1.0 and truth["seed"] == 7
        x = pd.read_csv(samples_csv)["x"].to_numpy()
        assert x.size == 5000
        se = truth["model_sd"] / np.sqrt(x.size)
        assert abs(x.mean() - truth["model_mean"]) < 4 * se

    def test_empty(self, tmp_path):
        assert main(["simulate", "--T", "1", "--mu", "0", "--rho", "4", "--gamma", "0", "--n", "0",
                     "--out", str(tmp_path)]) == 0
        assert (tmp_path / "samples.csv").read_text() == "x\n"

    def test_invalid_params(self, tmp_path, capsys):
        assert main(["simulate", "--T", "-1", "--mu", "0", "--rho", "4", "--gamma", "0", "--n", "10",
                     "--out", str(tmp_path)]) == 2
        assert error_code(capsys) == "E_PARAMS_INVALID"

    def test_seeded(self, tmp_path, samples_csv):
        assert main(["simulate", "--T", "1", "--mu", "0.5", "--rho", "4", "--gamma", "-0.2",
                     "--n", "5000", "--seed", "7", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "samples.csv").read_bytes() == samples_csv.read_bytes()


class TestFit:
    def test_writes_result(self, fit_dir):
        result = json.loads((fit_dir / "result.json").read_text())
        assert result["prior"] == [0.5, 0.5]
        assert 0 <= result["explained"] <= 1
        assert (fit_dir / "result_densities.csv").exists()
        assert manifest_lists_everything(fit_dir)

    def test_extreme_prior_and_entry_swap(self, tmp_path, samples_csv):
        assert main(["fit", "--samples", str(samples_csv), "--prior", "extreme-sell", "--entry", "sell",
                     "--exit", "buy", "--out", str(tmp_path)]) == 0
        result = json.loads((tmp_path / "result.json").read_text())
        assert result["entry"] == "sell" and result["prior"][1] == pytest.approx(0.99)

    def test_bad_config(self, tmp_path, samples_csv, capsys):
        (tmp_path / "cfg.json").write_text(json.dumps({"bogus_key": 1}))
        assert main(["fit", "--samples", str(samples_csv), "--config", str(tmp_path / "cfg.json"),
                     "--out", str(tmp_path / "o")]) == 2
        assert error_code(capsys) == "E_CONFIG_INVALID"

    def test_unknown_prior(self, tmp_path, samples_csv, capsys):
        assert main(["fit", "--samples", str(samples_csv), "--prior", "psychic", "--out", str(tmp_path)]) == 2
        assert error_code(capsys) == "E_USAGE"

    def test_missing_samples(self, tmp_path, capsys):
        assert main(["fit", "--samples", str(tmp_path / "x.csv"), "--out", str(tmp_path)]) == 2
        assert error_code(capsys) == "E_INPUT_NOT_FOUND"


class TestPlotdata:
    def test_four_csvs(self, tmp_path, fit_dir):
        assert main(["plotdata", "--result", str(fit_dir / "result.json"), "--out", str(tmp_path)]) == 0
        for name in ("fx.csv", "decision.csv", "joint.csv", "marginals.csv"):
            header = (tmp_path / name).read_text().splitlines()[0]
            assert header and not header[0].isdigit()
        decision = pd.read_csv(tmp_path / "decision.csv")
        total = decision["f_buy_given_x"] + decision["f_sell_given_x"]
        assert np.abs(total - 1).max() < 1e-12
        fx = pd.read_csv(tmp_path / "fx.csv")
        grid = Grid.from_points(fx["x"].to_numpy())
        assert abs(grid.integrate(fx["f_x"].to_numpy()) - 1) < 1e-8

    def test_missing_result(self, tmp_path, capsys):
        assert main(["plotdata", "--result", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2
        assert error_code(capsys) == "E_RESULT_NOT_FOUND"


@pytest.fixture(scope="module")
def run(tmp_path_factory, prices_csv):
    out = tmp_path_factory.mktemp("rolling")
    code = main(["rolling", "--prices", str(prices_csv), "--grouping", "annual",
                 "--prior", "uniform,previous", "--seed", "3", "--out", str(out)])
    return code, out


class TestRolling:
    def test_outputs(self, run):
        code, out = run
        assert code == 0
        history = (out / "previous" / "history.jsonl").read_text().splitlines()
        assert len(history) == 4
        records = [json.loads(line) for line in history]
        for prev, cur in zip(records, records[1:]):
            assert cur["prior"] == prev["marginal"]
        assert len(list((out / "previous").glob("*_densities.csv"))) == 4
        table = pd.read_csv(out / "summary_table.csv")
        assert list(table.columns) == ["period", "uniform", "previous"]
        assert table["uniform"].str.match(r"^\d+ \(\d+%\)$").all()
        assert manifest_lists_everything(out)

    def test_plotdata_over_run(self, run, tmp_path):
        assert main(["plotdata", "--run", str(run[1]), "--out", str(tmp_path)]) == 0
        marginals = pd.read_csv(tmp_path / "marginals.csv")
        assert len(marginals) == 8 and set(marginals["prior"]) == {"uniform", "previous"}

    def test_partial_failure_exit_code(self, tmp_path):
        # a period with too few samples fails, the others still fit
        rows = [{"date": f"{y}-03-31", "area": f"a{i}", "return": float(v)}
                for y, n in ((2006, 300), (2007, 50), (2008, 300))
                for i, v in enumerate(np.random.default_rng(y).normal(size=n))]
        pd.DataFrame(rows).to_csv(tmp_path / "r.csv", index=False)
        code = main(["rolling", "--returns", str(tmp_path / "r.csv"), "--prior", "uniform,previous",
                     "--out", str(tmp_path / "o")])
        assert code == 1
        table = pd.read_csv(tmp_path / "o" / "summary_table.csv")
        assert table["uniform"].tolist()[1] == "failed"
        assert table["uniform"].tolist()[2] != "failed"
        # the previous schedule cannot continue past a missing marginal
        assert table["previous"].tolist()[1:] == ["failed", "failed"]


def test_decide_prints_probabilities(capsys):
    assert main(["decide", "--T", "1", "--mu", "0.25", "--x", "0.25", "1.0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["rows"][0]["f_buy_given_x"] == 0.5


def test_ri_subcommand(capsys):
    assert main(["ri", "--payoffs", "[[1, 0], [0, 1]]", "--T", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["f_a"] == pytest.approx([0.5, 0.5], abs=1e-15) and out["residual"] < 1e-10


def test_module_entry_point_usage_error():
    proc = subprocess.run([sys.executable, "-m", "qrse_priors", "fit"], capture_output=True, text=True)
    assert proc.returncode == 2


def test_manifest_timestamp_from_source_date_epoch(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert main(["simulate", "--T", "1", "--mu", "0", "--rho", "4", "--gamma", "0", "--n", "3",
                 "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["timestamp"] == "1970-01-01T00:00:00Z"
    assert manifest["config"] == FitConfig().to_dict()
