"""
The two-period game: firms choose founding capital, then compete on premiums.

This module has the monopoly capital closed forms, the threshold capitals and premiums, the pure-equilibrium
conditions and the construction of the first-period payoff matrix.
"""
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from attrs import asdict, define, field
from scipy.optimize import brentq

from .exceptions import InvalidParameterError, MarketNotViableError, NumericalError
from .market import CurvePoint, MarketParams, demand, p_l, p_m, p_u

logger = logging.getLogger(__name__)

MACHINE_FORMAT = "%.17g"


class PayoffConvention(str, Enum):
    """
    Premium used when the firms share the market in the second period.

    ``WORST_CASE`` uses ``P_L`` even below the net premium and reproduces the published tables;
    ``BOUNDED`` uses ``max(qK, P_L)``.
    """

    WORST_CASE = "worst-case"
    BOUNDED = "bounded"


class PureNEKind(str, Enum):
    MONOPOLY_ENTRY_NE = "MonopolyEntryNE"
    NO_PURE_NE_P2ZL = "NoPureNE_P2ZL"
    NO_PURE_NE_P1ZU = "NoPureNE_P1ZU"


def r_max(params: MarketParams) -> float:
    """The interest rate at and above which no firm can operate without loss. Infinite when ``sigma <= alpha``."""
    excess = params.sigma - params.alpha
    if excess <= 0:
        return math.inf
    return params.alpha / excess


def check_viable(params: MarketParams) -> None:
    limit = r_max(params)
    if params.r >= limit:
        raise MarketNotViableError(f"interest rate {params.r} is not below r_max = {limit}")


def limit_premium(params: MarketParams, firms: int = 1) -> float:
    """The limit of ``P_L(C, firms)`` as the capital tends to zero (infinite when ``sigma >= alpha/sqrt(firms)``)."""
    alpha = params.alpha / math.sqrt(firms)
    if alpha <= params.sigma:
        return math.inf
    return alpha * params.net_premium / (alpha - params.sigma)


def _premium(params: MarketParams, capital: float, firms: int) -> float:
    if capital <= 0:
        return limit_premium(params, firms)
    return p_l(params, capital, firms)


@define(frozen=True)
class ExAnteThresholds:
    """The threshold capitals and premiums of the capital game."""

    c_mc: float
    p_mc: float
    p_mcl: float
    c_1z: float
    p_1zu: float
    p_1zl: float
    c_2z: float
    p_2zl: float
    r_max: float

    def to_dict(self) -> dict:
        return asdict(self)


@define(frozen=True)
class PureNEClassification:
    kind: PureNEKind
    thresholds: ExAnteThresholds

    @property
    def entry_capital(self) -> float | None:
        return self.thresholds.c_mc if self.kind == PureNEKind.MONOPOLY_ENTRY_NE else None

    @property
    def entry_premium(self) -> float | None:
        return self.thresholds.p_mc if self.kind == PureNEKind.MONOPOLY_ENTRY_NE else None


def monopoly_capital(params: MarketParams) -> tuple[float, float]:
    """
    The profit-maximising founding capital of a monopolist and the premium it then charges.

    Raises:
        MarketNotViableError: If ``r >= r_max``.
    """
    check_viable(params)
    sigma, alpha, r = params.sigma, params.alpha, params.r
    qk = params.net_premium
    excess = sigma - alpha
    capital = ((sigma / (1.0 + r)) ** 2 - excess**2) / (4.0 * qk)
    premium = 2.0 * alpha * qk / (alpha - sigma * r / (1.0 + r))

    if capital <= 0:
        logger.warning(f"monopoly capital {capital} is not positive; the monopolist founds with no capital")
        return 0.0, max(limit_premium(params), p_m(params))

    implied = p_u(params, capital)
    if not math.isclose(implied, premium, rel_tol=1e-9):
        raise NumericalError(f"monopoly premium {premium} disagrees with P_U(C_MC) = {implied}")
    return capital, premium


def zero_profit_mpr_point(params: MarketParams, capital: float) -> CurvePoint:
    """
    Intersection of the founding-capital zero-profit curve (variable cost ``rC``) with the MPR curve of ``C``.
    """
    if not capital > 0:
        raise InvalidParameterError(f"capital must be positive, got {capital}")
    n = ((1.0 + params.r) * capital / params.sigma) ** 2
    return CurvePoint(premium=params.net_premium + params.r * capital / n, n=n)


def zero_profit_capital(params: MarketParams, firms: int = 1) -> float:
    """Founding capital at which demand, the MPR curve and the zero-profit curve meet (``C_1Z`` or ``C_2Z``)."""
    alpha = params.alpha / math.sqrt(firms)
    r = params.r
    sigma = params.sigma
    return sigma * (alpha * (1.0 + r) - r * sigma) / ((1.0 + r) ** 2 * params.net_premium)


def zero_profit_capital_bisection(params: MarketParams, firms: int = 1) -> float:
    """Root-finding counterpart of the closed forms for ``C_1Z`` (``firms=1``) and ``C_2Z`` (``firms=2``)."""
    alpha = params.alpha / math.sqrt(firms)

    def residual(capital: float) -> float:
        point = zero_profit_mpr_point(params, capital)
        return math.sqrt(point.n) * point.premium - alpha

    upper = max(params.sigma, 1.0)
    while residual(upper) <= 0:
        upper *= 2.0
        if upper > 1e300:
            raise NumericalError("no zero-profit capital found")
    return brentq(residual, 1e-12 * upper, upper, xtol=1e-14, rtol=1e-14)


def thresholds(params: MarketParams) -> ExAnteThresholds:
    """The threshold capitals and premiums that decide whether the capital game has a pure equilibrium."""
    check_viable(params)
    c_mc, p_mc = monopoly_capital(params)
    c_1z = zero_profit_capital(params, 1)
    c_2z = zero_profit_capital(params, 2)
    if not (c_1z > 0 and c_2z > 0):
        raise NumericalError(f"zero-profit capitals must be positive, got {c_1z} and {c_2z}")
    return ExAnteThresholds(
        c_mc=c_mc,
        p_mc=p_mc,
        p_mcl=_premium(params, c_mc, 2),
        c_1z=c_1z,
        p_1zu=zero_profit_mpr_point(params, c_1z).premium,
        p_1zl=p_l(params, c_1z, 2),
        c_2z=c_2z,
        p_2zl=zero_profit_mpr_point(params, c_2z).premium,
        r_max=r_max(params),
    )


def pure_ne_classification(params: MarketParams) -> PureNEClassification:
    """
    Decides whether the capital game has the pure equilibrium in which exactly one firm founds with ``C_MC``.
    """
    limits = thresholds(params)
    if limits.p_mc >= limits.p_2zl:
        kind = PureNEKind.NO_PURE_NE_P2ZL
    elif limits.p_mcl >= limits.p_1zu:
        kind = PureNEKind.NO_PURE_NE_P1ZU
    else:
        kind = PureNEKind.MONOPOLY_ENTRY_NE
    return PureNEClassification(kind=kind, thresholds=limits)


@define(frozen=True)
class SecondPeriodOutcome:
    """Premiums, market shares and profits of the two founders in the premium stage."""

    rule: str
    premium_row: float | None
    premium_col: float | None
    n_row: float
    n_col: float
    payoff_row: float
    payoff_col: float


def _shared_premium(params: MarketParams, capital: float, convention: PayoffConvention) -> float:
    premium = p_l(params, capital, 2)
    if convention == PayoffConvention.BOUNDED:
        premium = max(params.net_premium, premium)
    return premium


def monopoly_profit(params: MarketParams, capital: float) -> float:
    """Second-period profit of a lone founder, pricing at ``max(P_M, P_U(C))``."""
    if capital <= 0:
        return 0.0
    premium = max(p_m(params), p_u(params, capital))
    return demand(params, premium) * (premium - params.net_premium) - params.r * capital


def second_period_outcome(
    params: MarketParams,
    capital_row: float,
    capital_col: float,
    convention: PayoffConvention = PayoffConvention.WORST_CASE,
) -> SecondPeriodOutcome:
    """The worst-case premium-stage outcome for a pair of founding capitals."""
    if capital_row < 0 or capital_col < 0:
        raise InvalidParameterError("capitals must be non-negative")
    qk, r = params.net_premium, params.r

    if capital_row == 0 and capital_col == 0:
        return SecondPeriodOutcome("no-entry", None, None, 0.0, 0.0, 0.0, 0.0)

    if capital_row == 0 or capital_col == 0:
        capital = max(capital_row, capital_col)
        premium = max(p_m(params), p_u(params, capital))
        n = demand(params, premium)
        profit = n * (premium - qk) - r * capital
        if capital_row > 0:
            return SecondPeriodOutcome("monopoly", premium, None, n, 0.0, profit, 0.0)
        return SecondPeriodOutcome("monopoly", None, premium, 0.0, n, 0.0, profit)

    if capital_row == capital_col:
        premium = _shared_premium(params, capital_row, convention)
        n = demand(params, premium) / 2.0
        profit = n * (premium - qk) - r * capital_row
        return SecondPeriodOutcome("equal-split", premium, premium, n, n, profit, profit)

    small, high = sorted((capital_row, capital_col))
    small_lower = _shared_premium(params, small, convention)
    high_upper = p_u(params, high)

    if small_lower <= high_upper:
        n = demand(params, small_lower) / 2.0
        return SecondPeriodOutcome(
            "split-at-small-lower",
            small_lower,
            small_lower,
            n,
            n,
            n * (small_lower - qk) - r * capital_row,
            n * (small_lower - qk) - r * capital_col,
        )

    n = demand(params, high_upper)
    leader = n * (high_upper - qk) - r * high
    if capital_row == high:
        return SecondPeriodOutcome("large-takes-all", high_upper, None, n, 0.0, leader, -r * small)
    return SecondPeriodOutcome("large-takes-all", None, high_upper, 0.0, n, -r * small, leader)


def second_period_payoffs(
    params: MarketParams,
    capital_row: float,
    capital_col: float,
    convention: PayoffConvention = PayoffConvention.WORST_CASE,
) -> tuple[float, float]:
    outcome = second_period_outcome(params, capital_row, capital_col, convention)
    return outcome.payoff_row, outcome.payoff_col


def capital_grid(c_top: float, size: int = 20) -> np.ndarray:
    """Zero followed by ``size - 1`` evenly spaced capital levels ending at ``c_top``."""
    if size < 2:
        raise InvalidParameterError("a capital grid needs at least two levels")
    if not c_top > 0:
        raise InvalidParameterError(f"the top capital level must be positive, got {c_top}")
    return np.concatenate([[0.0], c_top * np.arange(1, size) / (size - 1)])


def _check_levels(instance, attribute, value):
    if value.ndim != 1 or value.size < 1:
        raise InvalidParameterError("capital levels must be a non-empty vector")
    if np.any(np.diff(value) <= 0):
        raise InvalidParameterError("capital levels must be strictly increasing")
    if value[0] != 0:
        raise InvalidParameterError("capital levels must include 0")


def _as_float_array(value) -> np.ndarray:
    return np.array(value, dtype=float)


@define(frozen=True, eq=False)
class PayoffMatrix:
    """
    Row-player expected profits over a grid of founding capitals.

    The game is symmetric: the column player's matrix is the transpose of ``cells``.
    """

    capital_levels: np.ndarray = field(converter=_as_float_array, validator=_check_levels)
    cells: np.ndarray = field(converter=_as_float_array)

    def __attrs_post_init__(self):
        size = self.capital_levels.size
        if self.cells.shape != (size, size):
            raise InvalidParameterError(f"payoff matrix must be {size}x{size}, got {self.cells.shape}")
        if not np.all(np.isfinite(self.cells)):
            raise InvalidParameterError("payoff matrix entries must be finite")

    @property
    def zero_index(self) -> int:
        return 0

    @property
    def column_payoffs(self) -> np.ndarray:
        return self.cells.T

    def to_frame(self) -> pd.DataFrame:
        labels = [MACHINE_FORMAT % level for level in self.capital_levels]
        df = pd.DataFrame(self.cells, index=labels, columns=labels)
        df.index.name = "capital"
        return df

    def to_csv(self, path: Path, decimals: int | None = None) -> Path:
        """
        Writes the matrix with the capital levels as header row and column.

        Machine files keep 17 significant digits; ``decimals`` rounds for human-readable tables.
        """
        path = Path(path)
        df = self.to_frame()
        if decimals is None:
            df.to_csv(path, float_format=MACHINE_FORMAT)
        else:
            df.index = [f"{level:.{decimals}f}" for level in self.capital_levels]
            df.columns = list(df.index)
            df.index.name = "capital"
            df.round(decimals).to_csv(path, float_format=f"%.{decimals}f")
        return path

    @classmethod
    def from_csv(cls, path: Path) -> "PayoffMatrix":
        """Reads a matrix written by :meth:`to_csv`; rows and columns are put into increasing capital order."""
        df = pd.read_csv(path, index_col=0, float_precision="round_trip")
        row_levels = np.asarray(df.index, dtype=float)
        col_levels = np.asarray([float(c) for c in df.columns])
        if not np.allclose(np.sort(row_levels), np.sort(col_levels)):
            raise InvalidParameterError(f"row and column capital levels differ in {path}")
        rows = np.argsort(row_levels, kind="stable")
        cols = np.argsort(col_levels, kind="stable")
        return cls(capital_levels=row_levels[rows], cells=df.to_numpy(dtype=float)[np.ix_(rows, cols)])

    def to_json(self, path: Path) -> Path:
        path = Path(path)
        data = dict(capital_levels=self.capital_levels.tolist(), cells=self.cells.tolist())
        path.write_text(json.dumps(data, indent=2))
        return path

    @classmethod
    def from_json(cls, path: Path) -> "PayoffMatrix":
        data = json.loads(Path(path).read_text())
        return cls(capital_levels=data["capital_levels"], cells=data["cells"])

    @classmethod
    def read(cls, path: Path) -> "PayoffMatrix":
        path = Path(path)
        if path.suffix.lower() == ".json":
            return cls.from_json(path)
        return cls.from_csv(path)


def build_payoff_matrix(
    params: MarketParams,
    capital_levels: Sequence[float],
    convention: PayoffConvention = PayoffConvention.WORST_CASE,
) -> PayoffMatrix:
    """
    The row player's first-period payoff matrix over the given founding capitals.

    Args:
        params (MarketParams): The market.
        capital_levels (Sequence[float]): Strictly increasing capital levels starting at 0.
        convention (PayoffConvention, optional): Shared-market premium convention. Defaults to the worst case.
    """
    levels = np.asarray(capital_levels, dtype=float)
    cells = np.zeros((levels.size, levels.size))
    for i, row in enumerate(levels):
        for j, col in enumerate(levels):
            cells[i, j] = second_period_outcome(params, row, col, convention).payoff_row
    return PayoffMatrix(capital_levels=levels, cells=cells)
