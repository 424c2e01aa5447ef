"""
Pure-strategy Nash equilibria of the premium-setting game for fixed capital.

The symmetric oligopoly, the monopoly comparison and the asymmetric duopoly taxonomy (Cases I/a to II/c) live here,
together with the market-sharing rule and a sampling oracle that checks candidate equilibria for profitable deviations.
"""
import logging
import math
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from attrs import define, field
from scipy.optimize import brentq

from .exceptions import ClassificationError, InvalidParameterError
from .market import (
    Branch,
    CapitalizedFirm,
    MarketParams,
    branch_of_intersection,
    demand,
    mcr,
    p_l,
    p_m,
    p_u,
)

logger = logging.getLogger(__name__)

# Relative offset used to represent "strictly above" in continuous mode.
STRICT_EPS = 1e-9

# Relative slack on the capital requirement; covers rounding at the curve intersections.
SOLVENCY_RTOL = 1e-10


class EquilibriumKind(str, Enum):
    INTERVAL_CONTINUUM = "IntervalContinuum"
    SINGLE_LEADER_CONTINUOUS = "SingleLeaderContinuous"
    DISCRETE_LADDER = "DiscreteLadder"
    ASYMMETRIC_SPLIT = "AsymmetricSplit"
    NONE = "None"


class Regime(str, Enum):
    SYMMETRIC = "Symmetric"
    CASE_IA = "CaseIa"
    CASE_IB = "CaseIb"
    CASE_IC = "CaseIc"
    CASE_IIA = "CaseIIa"
    CASE_IIB = "CaseIIb"
    CASE_IIC = "CaseIIc"


class LowerBound(str, Enum):
    """
    Convention for the lower end of the symmetric equilibrium interval.

    ``BOUNDED`` clips ``P_L`` at the net premium; ``WORST_CASE`` keeps ``P_L`` even when it is below ``qK``.
    """

    BOUNDED = "bounded"
    WORST_CASE = "worst-case"


def _strictly_increasing(instance, attribute, value):
    values = np.asarray(value, dtype=float)
    if values.size == 0:
        raise InvalidParameterError("a premium grid needs at least one premium")
    if np.any(values <= 0):
        raise InvalidParameterError("grid premiums must be positive")
    if np.any(np.diff(values) <= 0):
        raise InvalidParameterError("grid premiums must be strictly increasing")


@define(frozen=True)
class PremiumGrid:
    """A finite, strictly increasing set of premiums the firms may choose from."""

    premiums: tuple[float, ...] = field(converter=lambda x: tuple(float(v) for v in x), validator=_strictly_increasing)

    @classmethod
    def uniform(cls, low: float, high: float, size: int) -> "PremiumGrid":
        return cls(np.linspace(low, high, size))

    def __len__(self) -> int:
        return len(self.premiums)

    def first_at_or_above(self, premium: float) -> int | None:
        index = int(np.searchsorted(self.premiums, premium * (1.0 - 1e-12), side="left"))
        return index if index < len(self.premiums) else None

    def last_at_or_below(self, premium: float) -> int | None:
        index = int(np.searchsorted(self.premiums, premium * (1.0 + 1e-12), side="right")) - 1
        return index if index >= 0 else None


@define(frozen=True)
class FirmAssignment:
    """
    The premium and market share of one firm in an equilibrium.

    When ``open_above`` is set the premium is a witness: any premium at or above it gives the same outcome.
    """

    firm: int
    premium: float
    share: float
    open_above: bool = False


@define(frozen=True)
class EquilibriumSet:
    """Description of the pure Nash equilibria of one premium-stage regime."""

    kind: EquilibriumKind
    regime: Regime
    interval: tuple[float, float] | None = None
    assignments: tuple[FirmAssignment, ...] = ()
    ladder: tuple[tuple[float, float], ...] = ()
    notes: tuple[str, ...] = ()

    def __attrs_post_init__(self):
        if (self.interval is not None) != (self.kind == EquilibriumKind.INTERVAL_CONTINUUM):
            raise InvalidParameterError("an interval is present exactly for IntervalContinuum equilibria")
        if self.interval is not None:
            low, high = self.interval
            if not 0 < low <= high:
                raise InvalidParameterError(f"invalid equilibrium interval {self.interval}")

    def to_dict(self) -> dict:
        return dict(
            kind=self.kind.value,
            regime=self.regime.value,
            interval=list(self.interval) if self.interval else None,
            assignments=[
                dict(firm=a.firm, premium=a.premium, share=a.share, open_above=a.open_above) for a in self.assignments
            ],
            ladder=[list(pair) for pair in self.ladder],
            notes=list(self.notes),
        )


@define(frozen=True)
class PremiumPayoff:
    """Outcome of one firm in the premium stage for a given premium profile."""

    firm: int
    premium: float
    n: float
    solvent: bool
    profit: float

    @property
    def key(self) -> tuple[bool, float]:
        """Ordering key: any solvent outcome beats any insolvent one (the penalty dominates)."""
        return (self.solvent, self.profit)


@define(frozen=True)
class MonopolyComparison:
    holds: bool
    monopoly_premium: float
    p_l_pooled: float
    p_u_pooled: float
    holds_decreasing: bool


@define(frozen=True)
class ProfitProfile:
    """Sign of the per-firm profit across the symmetric equilibrium interval."""

    kind: str
    interval: tuple[float, float]
    zero_profit_premiums: tuple[float, ...] = ()


def p_u_pooled(params: MarketParams, total_capital: float, firms: int) -> float:
    """``P_U`` when a fixed total capital is split evenly between ``firms`` companies."""
    return p_u(params, total_capital / firms)


def p_l_pooled(params: MarketParams, total_capital: float, firms: int) -> float:
    """``P_L`` when a fixed total capital is split evenly between ``firms`` companies."""
    return p_l(params, total_capital / firms, firms)


def _is_solvent(params: MarketParams, capital: float, premium: float, n: float) -> bool:
    return mcr(params, n, premium) <= capital + SOLVENCY_RTOL * max(capital, 1.0)


def premium_stage_payoffs(
    params: MarketParams, capitals: Sequence[float], premiums: Sequence[float]
) -> list[PremiumPayoff]:
    """
    Splits the demand at the lowest premium equally between the firms quoting it and evaluates each firm.

    The profit excludes the penalty; breaches are reported through ``solvent``.
    """
    if len(capitals) != len(premiums):
        raise InvalidParameterError("one premium per firm is required")
    premiums = [float(p) for p in premiums]
    lowest = min(premiums)
    cheapest = [i for i, p in enumerate(premiums) if p == lowest]
    total = demand(params, lowest)

    payoffs = []
    for firm, (capital, premium) in enumerate(zip(capitals, premiums)):
        n = total / len(cheapest) if firm in cheapest else 0.0
        profit = n * (premium - params.net_premium) - params.r * capital
        payoffs.append(
            PremiumPayoff(
                firm=firm, premium=premium, n=n, solvent=_is_solvent(params, capital, premium, n), profit=profit
            )
        )
    return payoffs


def _deviation_candidates(params: MarketParams, premiums: Sequence[float], samples: int) -> np.ndarray:
    low = 0.5 * min(min(premiums), params.net_premium)
    high = 2.0 * max(max(premiums), p_m(params))
    candidates = [np.linspace(low, high, samples), [p_m(params)]]
    for premium in premiums:
        candidates.append([premium, premium * (1.0 - 1e-6), premium * (1.0 + 1e-6)])
    return np.unique(np.concatenate(candidates))


def profitable_deviations(
    params: MarketParams,
    capitals: Sequence[float],
    premiums: Sequence[float],
    grid: PremiumGrid | None = None,
    samples: int = 200,
    rtol: float = 1e-9,
) -> list[tuple[int, float]]:
    """
    Lists unilateral premium changes that strictly improve a firm's outcome.

    With a grid only grid premiums are tried; otherwise ``samples`` premiums are spread around the profile,
    together with points just below, at and just above every quoted premium.
    """
    base = premium_stage_payoffs(params, capitals, premiums)
    if grid is not None:
        candidates = np.asarray(grid.premiums)
    else:
        candidates = _deviation_candidates(params, premiums, samples)

    found = []
    for firm in range(len(premiums)):
        current = base[firm]
        for candidate in candidates:
            if candidate == premiums[firm]:
                continue
            profile = list(premiums)
            profile[firm] = float(candidate)
            deviation = premium_stage_payoffs(params, capitals, profile)[firm]
            if deviation.solvent and not current.solvent:
                found.append((firm, float(candidate)))
            elif deviation.solvent == current.solvent:
                slack = rtol * max(1.0, abs(current.profit))
                if deviation.profit > current.profit + slack:
                    found.append((firm, float(candidate)))
    return found


def is_deviation_proof(
    params: MarketParams,
    capitals: Sequence[float],
    premiums: Sequence[float],
    grid: PremiumGrid | None = None,
    samples: int = 200,
) -> bool:
    return not profitable_deviations(params, capitals, premiums, grid=grid, samples=samples)


def _ladder(
    params: MarketParams,
    grid: PremiumGrid,
    first: int | None,
    last: int | None,
    leader_capital: float,
) -> tuple[tuple[tuple[float, float], ...], tuple[str, ...]]:
    """
    Leader/follower pairs ``(P_j, P_j+1)`` for ``j`` in ``first..last``.

    A pair is dropped when the leader would rather share the market at ``P_j+1`` than serve all of it at ``P_j``.
    """
    if first is None or last is None:
        return (), ()
    pairs = []
    notes = []
    for j in range(first, min(last, len(grid) - 2) + 1):
        low, high = grid.premiums[j], grid.premiums[j + 1]
        whole = demand(params, low) * (low - params.net_premium) - params.r * leader_capital
        half = demand(params, high) / 2.0 * (high - params.net_premium) - params.r * leader_capital
        if half >= whole:
            notes.append(f"ladder-pair-dropped:{j}")
            continue
        pairs.append((low, high))
    return tuple(pairs), tuple(notes)


def symmetric_equilibrium(
    params: MarketParams,
    capital: float,
    firms: int,
    grid: PremiumGrid | None = None,
    lower_bound: LowerBound = LowerBound.BOUNDED,
) -> EquilibriumSet:
    """
    Pure Nash equilibria when ``firms`` companies hold the same capital.

    Args:
        params (MarketParams): The market.
        capital (float): Capital of every firm.
        firms (int): Number of firms, at least two.
        grid (PremiumGrid, optional): Premiums available in discrete mode. Defaults to continuous premiums.
        lower_bound (LowerBound, optional): Convention for the lower end of the interval.

    Returns:
        EquilibriumSet: The equilibria with regime ``Symmetric``.
    """
    if firms < 2:
        raise InvalidParameterError("a symmetric oligopoly needs at least two firms")
    qk = params.net_premium
    upper = p_u(params, capital)
    lower = p_l(params, capital, firms)
    monopoly = p_m(params)

    if upper <= qk:
        return EquilibriumSet(
            kind=EquilibriumKind.INTERVAL_CONTINUUM,
            regime=Regime.SYMMETRIC,
            interval=(qk, qk),
            notes=("capital-requirement-non-binding",),
        )

    if lower < upper:
        low = lower if lower_bound == LowerBound.WORST_CASE else max(qk, lower)
        return EquilibriumSet(
            kind=EquilibriumKind.INTERVAL_CONTINUUM, regime=Regime.SYMMETRIC, interval=(low, upper)
        )

    if monopoly <= upper:
        above = upper * (1.0 + STRICT_EPS)
        assignments = [FirmAssignment(firm=0, premium=upper, share=1.0)]
        assignments += [FirmAssignment(firm=i, premium=above, share=0.0, open_above=True) for i in range(1, firms)]
        return EquilibriumSet(
            kind=EquilibriumKind.SINGLE_LEADER_CONTINUOUS, regime=Regime.SYMMETRIC, assignments=tuple(assignments)
        )

    if grid is None:
        return EquilibriumSet(
            kind=EquilibriumKind.NONE, regime=Regime.SYMMETRIC, notes=("no-pure-NE-continuous", "discrete-only")
        )

    first = grid.first_at_or_above(upper)
    pairs, notes = _ladder(params, grid, first, first, capital)
    if not pairs:
        return EquilibriumSet(
            kind=EquilibriumKind.NONE, regime=Regime.SYMMETRIC, notes=("no-pure-NE-discrete",) + notes
        )
    leader, follower = pairs[0]
    assignments = [FirmAssignment(firm=0, premium=leader, share=1.0)]
    assignments += [FirmAssignment(firm=i, premium=follower, share=0.0, open_above=True) for i in range(1, firms)]
    return EquilibriumSet(
        kind=EquilibriumKind.DISCRETE_LADDER,
        regime=Regime.SYMMETRIC,
        assignments=tuple(assignments),
        ladder=pairs,
        notes=notes,
    )


def comparative_statics_report(
    params: MarketParams, capital: float, firms: Iterable[int] = range(2, 11)
) -> pd.DataFrame:
    """
    ``P_U`` and ``P_L`` as the number of firms changes.

    ``p_u`` and ``p_l`` hold the capital of each firm fixed; ``p_u_pooled`` and ``p_l_pooled`` hold the total capital
    fixed and split it evenly.
    """
    records = []
    for count in firms:
        records.append(
            dict(
                firms=count,
                p_u=p_u(params, capital),
                p_l=p_l(params, capital, count),
                p_u_pooled=p_u_pooled(params, capital, count),
                p_l_pooled=p_l_pooled(params, capital, count),
                branch=branch_of_intersection(params, capital, count).value,
            )
        )
    return pd.DataFrame.from_records(records)


def monopoly_premium(params: MarketParams, capital: float) -> float:
    return max(p_u(params, capital), p_m(params))


def monopoly_vs_duopoly_check(params: MarketParams, total_capital: float) -> MonopolyComparison:
    """
    Whether a monopoly holding all the capital charges less than any duopoly equilibrium premium.

    ``holds`` is the increasing-part condition ``qK < P_L^C(2)`` and ``P_M < P_L^C(2)``;
    ``holds_decreasing`` is ``P_M < min(P_L^C(2), P_U^C(2))``.
    """
    lower = p_l_pooled(params, total_capital, 2)
    upper = p_u_pooled(params, total_capital, 2)
    monopoly = p_m(params)
    return MonopolyComparison(
        holds=params.net_premium < lower and monopoly < lower,
        monopoly_premium=monopoly_premium(params, total_capital),
        p_l_pooled=lower,
        p_u_pooled=upper,
        holds_decreasing=monopoly < min(lower, upper),
    )


def profit_profile(params: MarketParams, capital: float, firms: int) -> ProfitProfile:
    """
    Classifies the symmetric equilibrium interval by the sign of the per-firm profit.

    Returns ``extra-profit`` when every equilibrium premium is profitable, ``loss`` when none is, and ``mixed`` with
    the zero-profit premiums otherwise.
    """
    equilibria = symmetric_equilibrium(params, capital, firms)
    if equilibria.kind != EquilibriumKind.INTERVAL_CONTINUUM:
        raise ClassificationError("profit profiles are defined for the interval regime only")
    low, high = equilibria.interval

    def profit(premium: float) -> float:
        return demand(params, premium) / firms * (premium - params.net_premium) - params.r * capital

    points = sorted({low, high, min(max(p_m(params), low), high)})
    values = [profit(p) for p in points]
    if all(v >= 0 for v in values):
        return ProfitProfile(kind="extra-profit", interval=(low, high))
    if all(v <= 0 for v in values):
        return ProfitProfile(kind="loss", interval=(low, high))

    zeros = []
    for (a, fa), (b, fb) in zip(zip(points, values), zip(points[1:], values[1:])):
        if fa * fb < 0:
            zeros.append(brentq(profit, a, b, xtol=1e-12))
    return ProfitProfile(kind="mixed", interval=(low, high), zero_profit_premiums=tuple(zeros))


def classify_duopoly(params: MarketParams, capital_small: float, capital_high: float) -> Regime:
    """Places an asymmetric duopoly in the Case I / Case II taxonomy."""
    if not 0 < capital_small <= capital_high:
        raise InvalidParameterError("capitals must satisfy 0 < small <= high")

    small_branch = branch_of_intersection(params, capital_small)
    high_branch = branch_of_intersection(params, capital_high)
    small_upper, high_upper = p_u(params, capital_small), p_u(params, capital_high)
    small_lower, high_lower = p_l(params, capital_small, 2), p_l(params, capital_high, 2)
    monopoly = p_m(params)

    if (
        small_branch == high_branch == Branch.DECREASING
        and small_upper < small_lower
        and high_upper < high_lower
    ):
        if monopoly < high_upper:
            return Regime.CASE_IA
        if monopoly <= small_upper:
            return Regime.CASE_IB
        return Regime.CASE_IC

    if small_branch == high_branch == Branch.INCREASING and params.net_premium < small_lower:
        if small_lower <= high_upper:
            return Regime.CASE_IIC
        if monopoly < small_lower:
            return Regime.CASE_IIA
        return Regime.CASE_IIB

    raise ClassificationError(
        f"capitals ({capital_small}, {capital_high}) are outside the Case I / Case II taxonomy "
        f"(branches {small_branch.value}/{high_branch.value})"
    )


def _leader_split(regime: Regime, leader_premium: float, follower_premium: float | None = None) -> EquilibriumSet:
    follower_premium = follower_premium or leader_premium * (1.0 + STRICT_EPS)
    return EquilibriumSet(
        kind=EquilibriumKind.ASYMMETRIC_SPLIT,
        regime=regime,
        assignments=(
            FirmAssignment(firm=0, premium=follower_premium, share=0.0, open_above=True),
            FirmAssignment(firm=1, premium=leader_premium, share=1.0),
        ),
    )


def asymmetric_duopoly(
    params: MarketParams, capital_small: float, capital_high: float, grid: PremiumGrid | None = None
) -> EquilibriumSet:
    """
    Pure Nash equilibria of a duopoly whose firms hold different capital.

    Firm 0 is the small firm and firm 1 the large one. Ladders list ``(large firm premium, small firm premium)``.

    Raises:
        ClassificationError: If the capitals fall outside the Case I / Case II taxonomy.
    """
    regime = classify_duopoly(params, capital_small, capital_high)
    high_upper = p_u(params, capital_high)
    monopoly = p_m(params)

    if regime == Regime.CASE_IIC:
        low = p_l(params, capital_small, 2)
        notes = ("grid-ignored",) if grid is not None else ()
        return EquilibriumSet(
            kind=EquilibriumKind.INTERVAL_CONTINUUM, regime=regime, interval=(low, high_upper), notes=notes
        )

    if grid is None:
        if regime == Regime.CASE_IA:
            return _leader_split(regime, high_upper)
        if regime == Regime.CASE_IB:
            return _leader_split(regime, monopoly)
        if regime == Regime.CASE_IIA:
            return _leader_split(regime, max(high_upper, monopoly))
        return EquilibriumSet(kind=EquilibriumKind.NONE, regime=regime, notes=("no-pure-NE-continuous",))

    first = grid.first_at_or_above(high_upper)
    if regime == Regime.CASE_IA:
        if first is None or first + 1 >= len(grid):
            return EquilibriumSet(kind=EquilibriumKind.NONE, regime=regime, notes=("grid-too-coarse",))
        return _leader_split(regime, grid.premiums[first], grid.premiums[first + 1])

    if regime == Regime.CASE_IB:
        last = grid.last_at_or_below(monopoly)
    elif regime == Regime.CASE_IC:
        last = grid.last_at_or_below(p_u(params, capital_small))
    else:
        ell = grid.last_at_or_below(p_l(params, capital_small, 2))
        # the small firm's half-market premium P_ell is excluded as a leader premium
        if ell is not None and grid.premiums[ell] >= p_l(params, capital_small, 2) * (1.0 - 1e-12):
            ell -= 1
        last = ell

    pairs, notes = _ladder(params, grid, first, last, capital_high)
    if not pairs:
        return EquilibriumSet(kind=EquilibriumKind.NONE, regime=regime, notes=("no-pure-NE-discrete",) + notes)
    leader, follower = pairs[0]
    return EquilibriumSet(
        kind=EquilibriumKind.DISCRETE_LADDER,
        regime=regime,
        assignments=(
            FirmAssignment(firm=0, premium=follower, share=0.0, open_above=True),
            FirmAssignment(firm=1, premium=leader, share=1.0),
        ),
        ladder=pairs,
        notes=notes,
    )


def firm_duopoly(
    params: MarketParams, firms: Sequence[CapitalizedFirm], grid: PremiumGrid | None = None
) -> EquilibriumSet:
    """
    :func:`asymmetric_duopoly` for two firms given in any order. The firm with less capital becomes firm 0.
    """
    if len(firms) != 2:
        raise InvalidParameterError(f"a duopoly has two firms, got {len(firms)}")
    small, large = sorted(firms, key=lambda firm: firm.capital)
    return asymmetric_duopoly(params, small.capital, large.capital, grid=grid)
