"""
Closed-form curves of a one-period insurance market with a Value-at-Risk capital requirement.

Every function is a pure function of an immutable :class:`MarketParams` and its numeric inputs.
The curve functions accept scalars or numpy arrays; scalar inputs give ``float`` results.
"""
import logging
import math
from enum import Enum

import numpy as np
from attrs import define, field, evolve
from scipy.stats import norm

from .exceptions import InvalidParameterError

logger = logging.getLogger(__name__)

SOLVENCY_LEVEL = 0.995
DEFAULT_PHI = float(norm.ppf(SOLVENCY_LEVEL))


def _positive(instance, attribute, value):
    if not value > 0:
        raise InvalidParameterError(f"{attribute.name} must be positive, got {value}")


def _non_negative(instance, attribute, value):
    if not value >= 0:
        raise InvalidParameterError(f"{attribute.name} must be non-negative, got {value}")


def _probability(instance, attribute, value):
    if not 0 < value < 1:
        raise InvalidParameterError(f"{attribute.name} must lie strictly between 0 and 1, got {value}")


def _optional_non_negative(instance, attribute, value):
    if value is not None:
        _non_negative(instance, attribute, value)


class Branch(str, Enum):
    """Side of the MPR maximum on which an intersection lies."""

    INCREASING = "Increasing"
    DECREASING = "Decreasing"


@define(frozen=True)
class MarketParams:
    """
    The exogenous parameters shared by every formula.

    Attributes:
        q (float): Claim probability of a single policy.
        K (float): Loss size of a claim.
        alpha (float): Demand scale, demand is ``alpha**2 / P**2``.
        r (float): Interest rate, the cost of holding one unit of capital.
        phi (float): Solvency quantile. Defaults to the 99.5% standard normal quantile.
        penalty_A (float | None): Regulatory penalty for breaching the capital requirement.
            ``None`` means the penalty dominates any attainable profit.
        adjust_cost_B (float): Fixed cost of raising capital after the premium stage.
    """

    q: float = field(converter=float, validator=_probability)
    K: float = field(converter=float, validator=_positive)
    alpha: float = field(converter=float, validator=_positive)
    r: float = field(default=0.0, converter=float, validator=_non_negative)
    phi: float = field(default=DEFAULT_PHI, converter=float, validator=_positive)
    penalty_A: float | None = field(default=None, validator=_optional_non_negative)
    adjust_cost_B: float = field(default=0.0, converter=float, validator=_non_negative)

    @property
    def net_premium(self) -> float:
        """The expected claim per policy, ``qK``."""
        return self.q * self.K

    @property
    def sigma(self) -> float:
        """The risk-margin scale ``phi * sqrt(q(1-q)) * K``."""
        return self.phi * math.sqrt(self.q * (1.0 - self.q)) * self.K

    def with_alpha(self, alpha: float) -> "MarketParams":
        return evolve(self, alpha=alpha)

    def share(self, firms: int) -> "MarketParams":
        """The parameters seen by a firm that serves ``1/firms`` of the demand."""
        firms = _check_firms(firms)
        return self.with_alpha(self.alpha / math.sqrt(firms))


@define(frozen=True)
class CurvePoint:
    """A premium and policy-count pair on one of the market curves."""

    premium: float
    n: float
    invalid_above_K: bool = False

    def __attrs_post_init__(self):
        if not self.premium > 0:
            raise InvalidParameterError(f"premium must be positive, got {self.premium}")
        if not self.n >= 0:
            raise InvalidParameterError(f"policy count must be non-negative, got {self.n}")


@define(frozen=True)
class CapitalizedFirm:
    """A firm identified by the capital it holds."""

    capital: float = field(converter=float, validator=_non_negative)


def _out(value):
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return float(value)
    return value


def _check_firms(firms: int) -> int:
    if int(firms) != firms or firms < 1:
        raise InvalidParameterError(f"number of firms must be an integer of at least 1, got {firms}")
    return int(firms)


def _check_capital(capital: float) -> float:
    if not capital > 0:
        raise InvalidParameterError(f"capital must be positive, got {capital}")
    return float(capital)


def max_demand(params: MarketParams) -> float:
    """The demand at the net premium, ``alpha**2 / (qK)**2``."""
    return params.alpha**2 / params.net_premium**2


def demand(params: MarketParams, premium, capped: bool = False):
    """
    Number of policies bought at a premium, ``alpha**2 / P**2``.

    Below the net premium the formula keeps growing; with ``capped`` the demand is held at :func:`max_demand` there.
    """
    premium = np.asarray(premium, dtype=float)
    if np.any(premium <= 0):
        raise InvalidParameterError("premium must be positive")
    result = params.alpha**2 / premium**2
    if capped:
        result = np.minimum(result, max_demand(params))
    return _out(result)


def inverse_demand(params: MarketParams, n):
    """The premium at which ``n`` policies are demanded, ``alpha / sqrt(n)``."""
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0):
        raise InvalidParameterError("policy count must be positive")
    if np.any(n > max_demand(params) * (1.0 + 1e-12)):
        raise InvalidParameterError(f"policy count exceeds the maximal demand {max_demand(params)}")
    return _out(params.alpha / np.sqrt(n))


def mcr(params: MarketParams, n, premium):
    """Minimum capital requirement ``n(qK - P) + sqrt(n) sigma``. Negative for self-financing portfolios."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise InvalidParameterError("policy count must be non-negative")
    return _out(n * (params.net_premium - np.asarray(premium, dtype=float)) + np.sqrt(n) * params.sigma)


def mpr(params: MarketParams, n, capital):
    """Minimum premium requirement ``qK - C/n + sigma/sqrt(n)``."""
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0):
        raise InvalidParameterError("policy count must be positive")
    return _out(params.net_premium - capital / n + params.sigma / np.sqrt(n))


def mpr_exceeds_claim(params: MarketParams, n, capital):
    """True where the MPR lies above the loss size ``K`` and therefore has no meaning."""
    result = np.asarray(mpr(params, n, capital)) > params.K
    if result.ndim == 0:
        return bool(result)
    return result


def mpr_point(params: MarketParams, n: float, capital: float) -> CurvePoint:
    premium = mpr(params, n, capital)
    flagged = premium > params.K
    if flagged:
        logger.debug(f"MPR {premium} at n={n} is above K={params.K}")
    return CurvePoint(premium=premium, n=float(n), invalid_above_K=flagged)


def mpr_max(params: MarketParams, capital: float) -> CurvePoint:
    """The maximum of the MPR curve for a given capital."""
    capital = _check_capital(capital)
    n_star = 4.0 * capital**2 / params.sigma**2
    premium = params.net_premium + params.sigma**2 / (4.0 * capital)
    return CurvePoint(premium=premium, n=n_star, invalid_above_K=premium > params.K)


def _root(params: MarketParams, capital: float, alpha: float) -> float:
    """
    Positive root ``s = sqrt(n)`` of ``qK s**2 + (sigma - alpha) s - C = 0``.

    This is where ``alpha / sqrt(n)`` meets the MPR curve.
    """
    qk = params.net_premium
    e = params.sigma - alpha
    d = math.sqrt(e * e + 4.0 * qk * capital)
    if e >= 0:
        return 2.0 * capital / (e + d)
    return (d - e) / (2.0 * qk)


def intersection_n(params: MarketParams, capital: float, firms: int = 1) -> float:
    """Policy count at which the ``1/firms`` share of the demand meets the MPR curve."""
    capital = _check_capital(capital)
    firms = _check_firms(firms)
    return _root(params, capital, params.alpha / math.sqrt(firms)) ** 2


def demand_intersection(params: MarketParams, capital: float, firms: int = 1) -> CurvePoint:
    """The intersection of the ``1/firms`` demand share with the MPR curve, as a point on the firm's own axis."""
    capital = _check_capital(capital)
    firms = _check_firms(firms)
    alpha = params.alpha / math.sqrt(firms)
    s = _root(params, capital, alpha)
    return CurvePoint(premium=alpha / s, n=s * s)


def p_u(params: MarketParams, capital: float) -> float:
    """The lowest premium at which a single firm with the given capital can solvently serve the whole market."""
    return p_l(params, capital, 1)


def p_l(params: MarketParams, capital: float, firms: int) -> float:
    """The lowest premium at which a firm serving ``1/firms`` of the market is solvent."""
    capital = _check_capital(capital)
    firms = _check_firms(firms)
    alpha = params.alpha / math.sqrt(firms)
    return alpha / _root(params, capital, alpha)


def p_m(params: MarketParams) -> float:
    """The premium maximising the technical result, ``2qK``."""
    return 2.0 * params.net_premium


def branch_of_intersection(params: MarketParams, capital: float, firms: int = 1) -> Branch:
    """Whether the demand share meets the MPR curve left (increasing part) or right of its maximum."""
    capital = _check_capital(capital)
    n_int = intersection_n(params, capital, firms)
    if n_int < mpr_max(params, capital).n:
        return Branch.INCREASING
    return Branch.DECREASING


def technical_result(params: MarketParams, premium, n):
    return _out(np.asarray(n, dtype=float) * (np.asarray(premium, dtype=float) - params.net_premium))


def expected_profit(
    params: MarketParams, capital: float, premium: float, n: float, capital_ok: bool | None = None
) -> float:
    """
    Expected profit ``n(P - qK) - rC`` of a firm, less the penalty when the capital requirement is breached.

    Args:
        capital_ok (bool | None): Whether the firm meets the capital requirement. If ``None`` it is computed
            from ``mcr(n, P) <= C``.

    Returns:
        float: The profit. When the requirement is breached and ``penalty_A`` is ``None`` this is ``-inf``.
    """
    if n < 0:
        raise InvalidParameterError("policy count must be non-negative")
    if capital_ok is None:
        capital_ok = mcr(params, n, premium) <= capital * (1.0 + 1e-12) + 1e-12
    profit = technical_result(params, premium, n) - params.r * capital
    if capital_ok:
        return profit
    if params.penalty_A is None:
        return -math.inf
    return profit - params.penalty_A


def profit_along_mpr(params: MarketParams, capital: float, n):
    """Expected profit of a firm that sells ``n`` policies at exactly its minimum premium requirement."""
    capital = _check_capital(capital)
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0):
        raise InvalidParameterError("policy count must be positive")
    return _out(-(1.0 + params.r) * capital + np.sqrt(n) * params.sigma)


def isoprofit_premium(params: MarketParams, capital: float, n, profit: float):
    """Premium at which a firm holding ``n`` policies earns exactly ``profit``."""
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0):
        raise InvalidParameterError("policy count must be positive")
    return _out(params.net_premium + (profit + params.r * capital) / n)


def zero_profit_premium(params: MarketParams, n, variable_cost: float):
    """Premium at which the technical result exactly covers ``variable_cost``."""
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0):
        raise InvalidParameterError("policy count must be positive")
    return _out(params.net_premium + variable_cost / n)
