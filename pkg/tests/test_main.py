import json
import tempfile
from pathlib import Path

import pandas as pd
import pytest
from typer.testing import CliRunner

from solvencygame.exante import PayoffMatrix
from solvencygame.main import EXIT_INVALID, EXIT_NOT_VIABLE, app

TEST_DATA_PATH = Path(__file__).parent / "testdata"

runner = CliRunner()

BASE_MARKET = ["--q", "0.1", "--K", "100", "--alpha", "110", "--r", "0.01"]
NOT_VIABLE_MARKET = ["--q", "0.2", "--K", "1000", "--alpha", "90", "--r", "0.26"]


def test_curves():
    with tempfile.TemporaryDirectory() as tmpdirname:
        out = Path(tmpdirname) / "curves.csv"
        result = runner.invoke(
            app, ["curves", "--out", str(out), *BASE_MARKET, "--capital", "300", "--capital", "80", "--points", "10"]
        )
        assert result.exit_code == 0, result.output
        assert f"Written '{out}'" in result.stdout
        df = pd.read_csv(out)
        assert len(df) == 10
        assert list(df.columns) == [
            "n",
            "demand_premium",
            "mpr_300",
            "mpr_invalid_300",
            "isoprofit_300",
            "zero_profit_300",
            "mpr_80",
            "mpr_invalid_80",
            "isoprofit_80",
            "zero_profit_80",
        ]
        assert df["n"].iloc[-1] == pytest.approx(110**2 / 10**2)
        assert df["demand_premium"].iloc[-1] == pytest.approx(10.0)
        assert (Path(tmpdirname) / "curves.manifest.json").exists()


def test_curves_needs_capital():
    with tempfile.TemporaryDirectory() as tmpdirname:
        result = runner.invoke(app, ["curves", "--out", str(Path(tmpdirname) / "curves.csv"), *BASE_MARKET])
        assert result.exit_code == EXIT_INVALID


def test_missing_market_parameter():
    result = runner.invoke(app, ["thresholds", "--q", "0.1", "--K", "100"])
    assert result.exit_code == EXIT_INVALID


def test_missing_config_file():
    result = runner.invoke(app, ["thresholds", "--config", str(TEST_DATA_PATH / "missing.conf")])
    assert result.exit_code == EXIT_INVALID


def test_equilibrium_symmetric_printed():
    result = runner.invoke(app, ["equilibrium", *BASE_MARKET, "--capital", "300", "-I", "5"])
    assert result.exit_code == 0, result.output
    assert '"mode": "symmetric"' in result.stdout
    assert '"kind": "IntervalContinuum"' in result.stdout


def test_equilibrium_symmetric_report():
    with tempfile.TemporaryDirectory() as tmpdirname:
        out = Path(tmpdirname) / "symmetric.json"
        result = runner.invoke(
            app, ["equilibrium", "--symmetric", "--out", str(out), *BASE_MARKET, "--capital", "300", "--firms", "5"]
        )
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["mode"] == "symmetric"
        assert report["firms"] == 5
        assert report["interval"][0] == pytest.approx(11.57, abs=0.01)
        assert report["interval"][1] == pytest.approx(14.96, abs=0.01)
        assert report["p_u"] == pytest.approx(report["interval"][1])


def test_equilibrium_asymmetric():
    with tempfile.TemporaryDirectory() as tmpdirname:
        out = Path(tmpdirname) / "asymmetric.json"
        result = runner.invoke(
            app,
            [
                "equilibrium",
                "--asymmetric",
                "--out",
                str(out),
                "--q",
                "0.2",
                "--K",
                "100",
                "--alpha",
                "90",
                "--r",
                "0.03",
                "--capital",
                "160",
                "--capital",
                "150",
            ],
        )
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["regime"] == "CaseIIc"
        assert report["capital_small"] == 150
        assert report["interval"][0] == pytest.approx(33.05, abs=0.05)
        assert report["interval"][1] == pytest.approx(35.70, abs=0.05)


def test_equilibrium_asymmetric_needs_two_capitals():
    result = runner.invoke(app, ["equilibrium", "--asymmetric", *BASE_MARKET, "--capital", "300"])
    assert result.exit_code == EXIT_INVALID


def test_equilibrium_modes_are_exclusive():
    result = runner.invoke(app, ["equilibrium", "--symmetric", "--expost", *BASE_MARKET, "--capital", "300"])
    assert result.exit_code == EXIT_INVALID


def test_equilibrium_expost():
    with tempfile.TemporaryDirectory() as tmpdirname:
        out = Path(tmpdirname) / "expost.json"
        result = runner.invoke(
            app,
            ["equilibrium", "--expost", "--out", str(out), *BASE_MARKET, "--penalty-B", "5", "--capital", "500"],
        )
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["mode"] == "expost"
        assert report["regime"] == "NoPureNEContinuous"
        assert report["p_1z"] == pytest.approx(10.07, abs=0.01)


def test_payoff_matrix_and_solve():
    with tempfile.TemporaryDirectory() as tmpdirname:
        tmpdirname = Path(tmpdirname)
        game = tmpdirname / "game.csv"
        result = runner.invoke(
            app,
            [
                "payoff-matrix",
                "--out",
                str(game),
                "--config",
                str(TEST_DATA_PATH / "low_rate_market.conf"),
                "--levels",
                "0,52.5,102,151.5",
            ],
        )
        assert result.exit_code == 0, result.output
        matrix = PayoffMatrix.read(game)
        assert matrix.capital_levels.tolist() == [0, 52.5, 102, 151.5]
        assert matrix.cells[2, 1] == pytest.approx(17.96, abs=0.25)
        manifest = json.loads((tmpdirname / "game.manifest.json").read_text())
        assert manifest["command"] == "payoff-matrix"
        assert manifest["parameters"]["K"] == 900

        equilibria = tmpdirname / "equilibria.csv"
        result = runner.invoke(app, ["solve", "--game", str(game), "--out", str(equilibria)])
        assert result.exit_code == 0, result.output
        assert "equilibria" in result.stdout
        df = pd.read_csv(equilibria)
        assert list(df.columns) == ["equilibrium", "player", "0", "52.5", "102", "151.5", "expected_payoff", "type"]
        assert len(df) >= 2
        assert set(df["type"]) <= {"Type1", "Type2", "Type3"}
        assert (tmpdirname / "equilibria.manifest.json").exists()


def test_payoff_matrix_json_grid():
    with tempfile.TemporaryDirectory() as tmpdirname:
        out = Path(tmpdirname) / "game.json"
        config = str(TEST_DATA_PATH / "low_rate_market.conf")
        result = runner.invoke(app, ["payoff-matrix", "--out", str(out), "--config", config, "--grid-size", "5"])
        assert result.exit_code == 0, result.output
        matrix = PayoffMatrix.read(out)
        assert matrix.cells.shape == (5, 5)
        assert matrix.capital_levels[-1] == pytest.approx(944.9, rel=1e-3)


def test_payoff_matrix_not_viable():
    with tempfile.TemporaryDirectory() as tmpdirname:
        result = runner.invoke(app, ["payoff-matrix", "--out", str(Path(tmpdirname) / "game.csv"), *NOT_VIABLE_MARKET])
        assert result.exit_code == EXIT_NOT_VIABLE


def test_solve_rejects_bad_levels():
    with tempfile.TemporaryDirectory() as tmpdirname:
        game = Path(tmpdirname) / "game.csv"
        game.write_text("capital,10,20\n10,1,2\n20,3,4\n")
        result = runner.invoke(app, ["solve", "--game", str(game), "--out", str(Path(tmpdirname) / "eq.csv")])
        assert result.exit_code == EXIT_INVALID


def test_solve_support_bound_in_manifest():
    with tempfile.TemporaryDirectory() as tmpdirname:
        tmpdirname = Path(tmpdirname)
        game = TEST_DATA_PATH / "low_rate_game.csv"
        out = tmpdirname / "bounded.csv"
        result = runner.invoke(app, ["solve", "--game", str(game), "--out", str(out), "--max-support", "2"])
        assert result.exit_code == 0, result.output
        manifest = json.loads((tmpdirname / "bounded.manifest.json").read_text())
        assert manifest["parameters"]["max_support"] == 2

        out = tmpdirname / "small.csv"
        small = tmpdirname / "small_game.csv"
        small.write_text("capital,0,10,20\n0,0,0,0\n10,5,-1,-1\n20,8,2,-3\n")
        result = runner.invoke(app, ["solve", "--game", str(small), "--out", str(out), "--all-supports"])
        assert result.exit_code == 0, result.output
        manifest = json.loads((tmpdirname / "small.manifest.json").read_text())
        assert manifest["parameters"]["max_support"] is None


def test_thresholds():
    with tempfile.TemporaryDirectory() as tmpdirname:
        out = Path(tmpdirname) / "thresholds.json"
        config = str(TEST_DATA_PATH / "low_rate_market.conf")
        result = runner.invoke(app, ["thresholds", "--config", config, "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["monopoly_capital"] == pytest.approx(432.3, rel=2e-3)
        assert report["thresholds"]["c_1z"] == pytest.approx(944.9, rel=1e-3)
        assert report["classification"] in {"MonopolyEntryNE", "NoPureNE_P2ZL", "NoPureNE_P1ZU"}


def test_thresholds_not_viable():
    result = runner.invoke(app, ["thresholds", *NOT_VIABLE_MARKET])
    assert result.exit_code == EXIT_NOT_VIABLE


def test_simulate():
    with tempfile.TemporaryDirectory() as tmpdirname:
        tmpdirname = Path(tmpdirname)
        out = tmpdirname / "ruin.csv"
        result = runner.invoke(
            app, ["simulate", "--out", str(out), *BASE_MARKET, "--n", "100,1000", "--trials", "2000", "--seed", "3"]
        )
        assert result.exit_code == 0, result.output
        df = pd.read_csv(out)
        assert df["n"].tolist() == [100, 1000]
        assert (df["seed"] == 3).all()
        manifest = json.loads((tmpdirname / "ruin.manifest.json").read_text())
        assert manifest["seed"] == 3
        assert manifest["command"] == "simulate"


def test_simulate_fixed_capital():
    with tempfile.TemporaryDirectory() as tmpdirname:
        out = Path(tmpdirname) / "ruin.csv"
        result = runner.invoke(
            app,
            ["simulate", "--out", str(out), *BASE_MARKET, "--n", "10", "--premium", "100", "--capital", "0"],
        )
        assert result.exit_code == 0, result.output
        df = pd.read_csv(out)
        assert df["estimate"].tolist() == [0.0]
        assert "ci_high" in df.columns


def test_sweep():
    with tempfile.TemporaryDirectory() as tmpdirname:
        tmpdirname = Path(tmpdirname)
        out = tmpdirname / "sweep.csv"
        result = runner.invoke(app, ["sweep", "--out", str(out), "--config", str(TEST_DATA_PATH / "sweep_small.conf")])
        assert result.exit_code == 0, result.output
        assert "1 of 1 tuples passed" in result.stdout
        df = pd.read_csv(out)
        assert df["status"].tolist() == ["passed"]
        summary = json.loads((tmpdirname / "sweep.summary.json").read_text())
        assert summary["tuples"] == 1
        assert (tmpdirname / "sweep.manifest.json").exists()
        assert (tmpdirname / "sweep.summary.manifest.json").exists()
