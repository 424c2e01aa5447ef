import tempfile
from pathlib import Path

import numpy as np
import pytest
from attrs import evolve

from solvencygame.exceptions import InvalidParameterError, MarketNotViableError
from solvencygame.exante import (
    ExAnteThresholds,
    PayoffConvention,
    PayoffMatrix,
    PureNEKind,
    build_payoff_matrix,
    capital_grid,
    check_viable,
    limit_premium,
    monopoly_capital,
    monopoly_profit,
    pure_ne_classification,
    r_max,
    second_period_outcome,
    second_period_payoffs,
    thresholds,
    zero_profit_capital,
    zero_profit_capital_bisection,
    zero_profit_mpr_point,
)
from solvencygame.market import MarketParams, mcr, p_u
from solvencygame.sweep import SweepConfig, parameter_grid

TEST_DATA_PATH = Path(__file__).parent / "testdata"


@pytest.fixture
def low_rate_params():
    return MarketParams(q=0.05, K=900, alpha=90, r=0.01)


@pytest.fixture
def high_rate_params():
    return MarketParams(q=0.025, K=600, alpha=150, r=0.2)


def assert_close_to_published(computed: np.ndarray, published: np.ndarray):
    tolerance = np.maximum(0.005 * np.abs(published), 0.25)
    mismatched = np.argwhere(np.abs(computed - published) > tolerance)
    assert mismatched.size == 0, [
        (int(i), int(j), computed[i, j], published[i, j]) for i, j in mismatched[:10]
    ]


def test_r_max():
    params = MarketParams(q=0.2, K=1000, alpha=90, r=0.26)
    assert r_max(params) == pytest.approx(90 / (params.sigma - 90))
    with pytest.raises(MarketNotViableError):
        check_viable(params)
    assert r_max(MarketParams(q=0.1, K=100, alpha=110)) == np.inf


def test_monopoly_capital(low_rate_params):
    capital, premium = monopoly_capital(low_rate_params)
    assert capital == pytest.approx(432.3, rel=2e-3)
    assert premium == pytest.approx(95.3, rel=2e-3)
    assert premium == pytest.approx(p_u(low_rate_params, capital))


def test_monopoly_capital_without_interest():
    params = MarketParams(q=0.1, K=100, alpha=110, r=0.0)
    capital, premium = monopoly_capital(params)
    assert premium == pytest.approx(20.0)
    assert capital > 0


def test_monopoly_capital_not_viable():
    with pytest.raises(MarketNotViableError):
        monopoly_capital(MarketParams(q=0.2, K=1000, alpha=90, r=0.26))


def test_zero_profit_capital(low_rate_params, high_rate_params):
    assert zero_profit_capital(low_rate_params) == pytest.approx(944.9, rel=1e-3)
    assert zero_profit_capital(high_rate_params) == pytest.approx(1471.67, rel=5e-3)
    assert zero_profit_capital(low_rate_params, 2) < zero_profit_capital(low_rate_params)


def test_zero_profit_capital_matches_bisection():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 200:
        params = MarketParams(
            q=rng.uniform(0.01, 0.2), K=rng.uniform(100, 1000), alpha=rng.uniform(90, 200), r=rng.uniform(0.0, 0.3)
        )
        if params.r >= r_max(params):
            continue
        for firms in (1, 2):
            closed = zero_profit_capital(params, firms)
            if closed <= 0:
                continue
            assert zero_profit_capital_bisection(params, firms) == pytest.approx(closed, rel=1e-8)
        checked += 1


def test_zero_profit_point_lies_on_demand(low_rate_params):
    capital = zero_profit_capital(low_rate_params)
    point = zero_profit_mpr_point(low_rate_params, capital)
    assert point.premium * point.n**0.5 == pytest.approx(low_rate_params.alpha)


def test_thresholds(low_rate_params):
    limits = thresholds(low_rate_params)
    assert limits.c_mc == pytest.approx(432.3, rel=2e-3)
    assert limits.c_1z == pytest.approx(944.9, rel=1e-3)
    assert limits.c_2z < limits.c_1z
    assert limits.p_1zu == pytest.approx(zero_profit_mpr_point(low_rate_params, limits.c_1z).premium)
    data = limits.to_dict()
    assert set(data) == {"c_mc", "p_mc", "p_mcl", "c_1z", "p_1zu", "p_1zl", "c_2z", "p_2zl", "r_max"}


def test_pure_ne_classification_low_rate(low_rate_params):
    result = pure_ne_classification(low_rate_params)
    limits = result.thresholds
    assert limits.p_mc == pytest.approx(95.3, rel=2e-3)
    assert limits.p_2zl == pytest.approx(48.84, rel=2e-3)
    assert result.kind == PureNEKind.NO_PURE_NE_P2ZL
    assert result.entry_capital is None
    assert result.entry_premium is None


def test_pure_ne_classification_fails_on_lower_premium():
    params = MarketParams(q=0.1, K=100, alpha=50, r=0.7)
    result = pure_ne_classification(params)
    limits = result.thresholds
    assert limits.p_mc == pytest.approx(55.0, rel=2e-3)
    assert limits.p_2zl == pytest.approx(99.96, rel=2e-3)
    assert limits.p_mcl == pytest.approx(52.09, rel=2e-3)
    assert limits.p_1zu == pytest.approx(27.5, rel=2e-3)
    assert result.kind == PureNEKind.NO_PURE_NE_P1ZU
    assert result.entry_capital is None


def test_monopoly_premium_is_twice_single_firm_zero_profit_premium(low_rate_params, high_rate_params):
    for params in (low_rate_params, high_rate_params, MarketParams(q=0.1, K=100, alpha=50, r=0.7)):
        limits = thresholds(params)
        assert limits.p_mc == pytest.approx(2 * limits.p_1zu, rel=1e-9)


def test_pure_ne_classification_monopoly_entry(monkeypatch, low_rate_params):
    crafted = ExAnteThresholds(
        c_mc=400.0, p_mc=40.0, p_mcl=30.0, c_1z=900.0, p_1zu=35.0, p_1zl=20.0, c_2z=600.0, p_2zl=45.0, r_max=np.inf
    )
    monkeypatch.setattr("solvencygame.exante.thresholds", lambda params: crafted)
    result = pure_ne_classification(low_rate_params)
    assert result.kind == PureNEKind.MONOPOLY_ENTRY_NE
    assert result.entry_capital == 400.0
    assert result.entry_premium == 40.0

    # the higher premium threshold is checked first
    monkeypatch.setattr("solvencygame.exante.thresholds", lambda params: evolve(crafted, p_mcl=50.0, p_2zl=40.0))
    assert pure_ne_classification(low_rate_params).kind == PureNEKind.NO_PURE_NE_P2ZL
    monkeypatch.setattr("solvencygame.exante.thresholds", lambda params: evolve(crafted, p_mcl=35.0))
    assert pure_ne_classification(low_rate_params).kind == PureNEKind.NO_PURE_NE_P1ZU


def test_single_firm_zero_profit_premium_below_duopoly_over_sweep_grid():
    checked = 0
    for alpha, q, K, r in parameter_grid(SweepConfig()):
        params = MarketParams(q=q, K=K, alpha=alpha, r=r)
        if r >= r_max(params) or zero_profit_capital(params, 2) <= 0:
            continue
        limits = thresholds(params)
        assert limits.p_1zu < limits.p_2zl, (alpha, q, K, r)
        checked += 1
    assert checked > 100


def test_limit_premium(low_rate_params):
    assert limit_premium(low_rate_params) == np.inf
    params = MarketParams(q=0.1, K=100, alpha=110)
    assert limit_premium(params) == pytest.approx(110 * 10 / (110 - params.sigma))


def test_second_period_rules(low_rate_params):
    assert second_period_outcome(low_rate_params, 0, 0).rule == "no-entry"
    assert second_period_payoffs(low_rate_params, 0, 0) == (0.0, 0.0)

    monopoly = second_period_outcome(low_rate_params, 52.5, 0)
    assert monopoly.rule == "monopoly"
    assert monopoly.payoff_row == pytest.approx(10, abs=0.25)
    assert monopoly.payoff_col == 0.0

    large = second_period_outcome(low_rate_params, 102, 52.5)
    assert large.rule == "large-takes-all"
    assert large.payoff_row == pytest.approx(17.96, abs=0.25)
    assert large.payoff_col == pytest.approx(-0.525)
    assert second_period_payoffs(low_rate_params, 52.5, 102)[0] == pytest.approx(-0.525)

    split = second_period_outcome(low_rate_params, 498, 448.5)
    assert split.rule == "split-at-small-lower"
    assert split.payoff_row == pytest.approx(15.3, abs=0.25)
    assert second_period_payoffs(low_rate_params, 448.5, 498)[0] == pytest.approx(15.79, abs=0.25)

    assert second_period_outcome(low_rate_params, 943.5, 943.5).payoff_row == pytest.approx(-41.38, abs=0.5)
    bounded = second_period_outcome(low_rate_params, 943.5, 943.5, PayoffConvention.BOUNDED)
    assert bounded.premium_row == pytest.approx(45.0)


def test_second_period_outcomes_are_solvent(low_rate_params):
    levels = capital_grid(zero_profit_capital(low_rate_params), 20)
    for row in levels:
        for col in levels:
            outcome = second_period_outcome(low_rate_params, row, col)
            for capital, premium, n in (
                (row, outcome.premium_row, outcome.n_row),
                (col, outcome.premium_col, outcome.n_col),
            ):
                if n > 0:
                    assert mcr(low_rate_params, n, premium) <= capital * (1 + 1e-9) + 1e-9


def test_second_period_negative_capital(low_rate_params):
    with pytest.raises(InvalidParameterError):
        second_period_outcome(low_rate_params, -1, 0)


def test_capital_grid():
    np.testing.assert_allclose(capital_grid(100, 5), [0, 25, 50, 75, 100])
    with pytest.raises(InvalidParameterError):
        capital_grid(100, 1)
    with pytest.raises(InvalidParameterError):
        capital_grid(0, 5)


def test_payoff_matrix_properties(low_rate_params):
    levels = capital_grid(zero_profit_capital(low_rate_params), 20)
    matrix = build_payoff_matrix(low_rate_params, levels)
    assert matrix.cells.shape == (20, 20)
    assert np.all(matrix.cells[0] == 0)
    for i, level in enumerate(levels[1:], start=1):
        assert matrix.cells[i, 0] == pytest.approx(monopoly_profit(low_rate_params, level))
    for i, row in enumerate(levels):
        for j, col in enumerate(levels):
            assert matrix.cells[i, j] == pytest.approx(second_period_payoffs(low_rate_params, col, row)[1])


def test_decreasing_returns_to_scale():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        params = MarketParams(q=rng.uniform(0.01, 0.5), K=rng.uniform(10, 1000), alpha=100)
        n = rng.uniform(0.1, 1000)
        premium = rng.uniform(0.5, 2.0) * params.net_premium
        a = rng.uniform(0.01, 5)
        assert mcr(params, (1 + a) * n, premium) < (1 + a) * mcr(params, n, premium)


def test_payoff_matrix_validation():
    with pytest.raises(InvalidParameterError):
        PayoffMatrix(capital_levels=[1.0, 2.0], cells=np.zeros((2, 2)))
    with pytest.raises(InvalidParameterError):
        PayoffMatrix(capital_levels=[0.0, 2.0, 1.0], cells=np.zeros((3, 3)))
    with pytest.raises(InvalidParameterError):
        PayoffMatrix(capital_levels=[0.0, 1.0], cells=np.zeros((2, 3)))
    with pytest.raises(InvalidParameterError):
        PayoffMatrix(capital_levels=[0.0, 1.0], cells=[[0.0, np.nan], [0.0, 0.0]])


def test_payoff_matrix_csv_and_json(low_rate_params):
    matrix = build_payoff_matrix(low_rate_params, capital_grid(zero_profit_capital(low_rate_params), 6))
    with tempfile.TemporaryDirectory() as tmpdirname:
        tmpdirname = Path(tmpdirname)
        read = PayoffMatrix.read(matrix.to_csv(tmpdirname / "matrix.csv"))
        np.testing.assert_array_equal(read.cells, matrix.cells)
        np.testing.assert_array_equal(read.capital_levels, matrix.capital_levels)

        read = PayoffMatrix.read(matrix.to_json(tmpdirname / "matrix.json"))
        np.testing.assert_array_equal(read.cells, matrix.cells)

        rounded = PayoffMatrix.read(matrix.to_csv(tmpdirname / "rounded.csv", decimals=2))
        np.testing.assert_allclose(rounded.cells, matrix.cells, atol=0.005 + 1e-12)


def test_published_game_fixture_is_sorted():
    matrix = PayoffMatrix.from_csv(TEST_DATA_PATH / "low_rate_game.csv")
    assert matrix.capital_levels[0] == 0
    assert matrix.capital_levels[-1] == pytest.approx(943.5)
    assert matrix.cells[1, 0] == pytest.approx(10)
    assert matrix.cells[2, 1] == pytest.approx(17.96)


def test_low_rate_game_reproduction(low_rate_params):
    published = PayoffMatrix.from_csv(TEST_DATA_PATH / "low_rate_game.csv")
    computed = build_payoff_matrix(low_rate_params, published.capital_levels)
    assert_close_to_published(computed.cells, published.cells)


def test_high_rate_game_reproduction(high_rate_params):
    published = PayoffMatrix.from_csv(TEST_DATA_PATH / "high_rate_game.csv")
    c_1z = zero_profit_capital(high_rate_params)
    assert published.capital_levels[-1] == pytest.approx(c_1z, rel=5e-3)
    computed = build_payoff_matrix(high_rate_params, capital_grid(c_1z, 20))
    assert_close_to_published(computed.cells, published.cells)
