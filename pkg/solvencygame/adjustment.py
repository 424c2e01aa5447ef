"""
Ex-post capital adjustment: firms may raise capital after the premium stage at a fixed cost ``B``.
"""
import logging
import math
from enum import Enum

import numpy as np
from attrs import define
from scipy.optimize import brentq

from .equilibrium import EquilibriumSet, PremiumGrid, symmetric_equilibrium
from .exceptions import InvalidParameterError
from .market import CurvePoint, MarketParams, demand, max_demand, mcr, p_l, p_u

logger = logging.getLogger(__name__)

TANGENCY_TOL = 1e-10


class AdjustmentRegime(str, Enum):
    NO_ADJUSTMENT = "NoAdjustment"
    NO_PURE_NE_CONTINUOUS = "NoPureNEContinuous"
    DISCRETE_LEADER_NE = "DiscreteLeaderNE"


@define(frozen=True)
class P1ZPoint:
    """Where demand, the MPR curve of the raised capital and the zero-profit curve meet."""

    premium: float
    delta_c: float
    n: float


@define(frozen=True)
class AdjustmentOutcome:
    """
    Result of the ex-post adjustment analysis.

    ``p_1z`` is ``None`` when the three curves never meet for a non-negative capital change
    (the premium is then treated as infinitely high).
    """

    regime: AdjustmentRegime
    p_1z: float | None = None
    delta_c_at_p1z: float | None = None
    n_at_p1z: float | None = None
    leader_premium: float | None = None
    rival_premium: float | None = None
    leader_profit: float | None = None
    equilibria: EquilibriumSet | None = None
    notes: tuple[str, ...] = ()

    def __attrs_post_init__(self):
        if (self.p_1z is None) != (self.delta_c_at_p1z is None):
            raise InvalidParameterError("p_1z and its capital change are reported together")
        if self.delta_c_at_p1z is not None and self.delta_c_at_p1z < 0:
            raise InvalidParameterError("capital can only be increased")

    def to_dict(self) -> dict:
        return dict(
            regime=self.regime.value,
            p_1z=self.p_1z,
            delta_c_at_p1z=self.delta_c_at_p1z,
            n_at_p1z=self.n_at_p1z,
            leader_premium=self.leader_premium,
            rival_premium=self.rival_premium,
            leader_profit=self.leader_profit,
            equilibria=self.equilibria.to_dict() if self.equilibria else None,
            notes=list(self.notes),
        )


def zp_curve(params: MarketParams, delta_c, premium):
    """Policy count at which the technical result just covers ``B + r dC``."""
    premium = np.asarray(premium, dtype=float)
    delta_c = np.asarray(delta_c, dtype=float)
    if np.any(premium <= params.net_premium):
        raise InvalidParameterError("the zero-profit curve is undefined at or below the net premium")
    if np.any(delta_c < 0):
        raise InvalidParameterError("capital can only be increased")
    result = (params.adjust_cost_B + params.r * delta_c) / (premium - params.net_premium)
    return float(result) if result.ndim == 0 else result


def zp_mpr_intersection(params: MarketParams, capital: float, delta_c: float) -> CurvePoint:
    """The point where the zero-profit curve for ``delta_c`` meets the MPR curve of capital ``C + delta_c``."""
    if not capital > 0:
        raise InvalidParameterError(f"capital must be positive, got {capital}")
    if delta_c < 0:
        raise InvalidParameterError("capital can only be increased")
    b = params.adjust_cost_B
    n = ((b + capital + (1.0 + params.r) * delta_c) / params.sigma) ** 2
    premium = params.net_premium + (b + params.r * delta_c) / n
    return CurvePoint(premium=premium, n=n)


def _delta_c(params: MarketParams, capital: float, s: float) -> float:
    return (params.sigma * s - params.adjust_cost_B - capital) / (1.0 + params.r)


def solve_p1z(params: MarketParams, capital: float) -> P1ZPoint | None:
    """
    Solves for the capital change at which the zero-profit/MPR intersection lies on the demand curve.

    With ``s = sqrt(n)`` the condition is ``qK s**2 + (r sigma / (1+r) - alpha) s + B - r(B+C)/(1+r) = 0``.
    The smallest root with a non-negative capital change is kept.
    """
    if not capital > 0:
        raise InvalidParameterError(f"capital must be positive, got {capital}")
    r = params.r
    a = params.net_premium
    b = r * params.sigma / (1.0 + r) - params.alpha
    c = params.adjust_cost_B - r * (params.adjust_cost_B + capital) / (1.0 + r)

    disc = b * b - 4.0 * a * c
    scale = max(b * b, abs(4.0 * a * c), 1e-300)
    if disc < -TANGENCY_TOL * scale:
        return None
    if abs(disc) <= TANGENCY_TOL * scale:
        roots = [-b / (2.0 * a)]
    else:
        q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
        roots = sorted({q / a, c / q if q != 0 else -b / a})

    candidates = []
    for s in roots:
        if s <= 0:
            continue
        delta_c = _delta_c(params, capital, s)
        if delta_c >= -1e-12 * max(capital, 1.0):
            candidates.append(max(delta_c, 0.0))

    if not candidates:
        return None
    if len(candidates) > 1:
        logger.warning(
            f"two non-negative capital changes solve the P1Z condition ({candidates}); using the smaller one"
        )
    delta_c = min(candidates)
    point = zp_mpr_intersection(params, capital, delta_c)
    return P1ZPoint(premium=point.premium, delta_c=delta_c, n=point.n)


def _p1z_residual(params: MarketParams, capital: float, delta_c):
    delta_c = np.asarray(delta_c, dtype=float)
    b = params.adjust_cost_B
    n = ((b + capital + (1.0 + params.r) * delta_c) / params.sigma) ** 2
    premium = params.net_premium + (b + params.r * delta_c) / n
    return n - params.alpha**2 / premium**2


def p1z_bisection(params: MarketParams, capital: float, samples: int = 4001) -> P1ZPoint | None:
    """
    Root-finding counterpart of :func:`solve_p1z`.

    Scans the capital change for the first sign change of ``n_ZMPR(dC) - D(P_ZMPR(dC))`` in either direction
    and refines it with Brent's method, so both routines keep the smallest non-negative capital change.
    """
    # past this capital change the MPR policy count exceeds the demand at any premium
    upper = (params.sigma * math.sqrt(max_demand(params)) - params.adjust_cost_B - capital) / (1.0 + params.r)
    if not upper > 0:
        return None

    grid = np.linspace(0.0, upper, samples)
    values = _p1z_residual(params, capital, grid)
    if values[0] == 0:
        delta_c = 0.0
    else:
        crossings = np.nonzero((values[:-1] < 0) != (values[1:] < 0))[0]
        if crossings.size == 0:
            return None
        i = crossings[0]
        delta_c = brentq(
            lambda d: float(_p1z_residual(params, capital, d)), grid[i], grid[i + 1], xtol=1e-14, rtol=1e-14
        )
        delta_c = float(delta_c)

    point = zp_mpr_intersection(params, capital, delta_c)
    return P1ZPoint(premium=point.premium, delta_c=delta_c, n=point.n)


def adjusted_profit(params: MarketParams, capital: float, premium: float, n: float) -> float:
    """
    Expected profit when a firm short of capital raises the missing ``MCR - C`` after the premium stage.

    Raising capital costs ``B`` plus interest on the raised amount.
    """
    if n < 0:
        raise InvalidParameterError("policy count must be non-negative")
    profit = n * (premium - params.net_premium) - params.r * capital
    requirement = mcr(params, n, premium)
    if requirement > capital:
        profit -= params.adjust_cost_B + params.r * (requirement - capital)
    return profit


def expost_equilibrium(
    params: MarketParams, capital: float, firms: int, grid: PremiumGrid | None = None
) -> AdjustmentOutcome:
    """
    Equilibrium of the premium stage when capital can be raised ex post.

    If ``p_1z`` is not below ``min(P_U, P_L)`` nobody adjusts and the fixed-capital equilibria apply.
    Otherwise there is no pure equilibrium with continuous premiums; on a grid one firm quotes ``p_1z``
    (snapped up to the grid) and a rival quotes the next premium.
    """
    if firms < 2:
        raise InvalidParameterError("ex-post adjustment needs at least two firms")
    point = solve_p1z(params, capital)
    threshold = min(p_u(params, capital), p_l(params, capital, firms))

    common = {}
    if point is not None:
        common = dict(p_1z=point.premium, delta_c_at_p1z=point.delta_c, n_at_p1z=point.n)

    if point is None or point.premium >= threshold:
        return AdjustmentOutcome(
            regime=AdjustmentRegime.NO_ADJUSTMENT,
            equilibria=symmetric_equilibrium(params, capital, firms, grid=grid),
            **common,
        )

    if grid is None:
        return AdjustmentOutcome(
            regime=AdjustmentRegime.NO_PURE_NE_CONTINUOUS, notes=("no-pure-NE-continuous",), **common
        )

    index = grid.first_at_or_above(point.premium)
    if index is None or index + 1 >= len(grid):
        return AdjustmentOutcome(
            regime=AdjustmentRegime.NO_PURE_NE_CONTINUOUS, notes=("grid-too-coarse",), **common
        )
    leader = grid.premiums[index]
    return AdjustmentOutcome(
        regime=AdjustmentRegime.DISCRETE_LEADER_NE,
        leader_premium=leader,
        rival_premium=grid.premiums[index + 1],
        leader_profit=adjusted_profit(params, capital, leader, demand(params, leader)),
        **common,
    )
