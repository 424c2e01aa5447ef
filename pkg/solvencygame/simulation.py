"""
Monte-Carlo check of the normal-approximation capital requirement on Bernoulli claim portfolios.
"""
import logging
import math
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from attrs import define, field
from joblib import Parallel, delayed
from scipy.stats import norm

from .exceptions import InvalidParameterError
from .market import MarketParams, mcr, p_m

logger = logging.getLogger(__name__)

GENERATOR = "PCG64"
BLOCK_SIZE = 1 << 16
TARGET_RUIN = 1.0 - 0.995


def _at_least_one(instance, attribute, value):
    if value < 1:
        raise InvalidParameterError(f"{attribute.name} must be at least 1, got {value}")


@define(frozen=True)
class SimulationSpec:
    """A portfolio of ``n`` policies sold at ``premium`` and backed by ``capital``, simulated ``trials`` times."""

    params: MarketParams
    n: int = field(converter=int, validator=_at_least_one)
    premium: float = field(converter=float)
    capital: float = field(converter=float)
    trials: int = field(converter=int, validator=_at_least_one)
    seed: int = field(default=0, converter=int)


@define(frozen=True)
class RuinEstimate:
    estimate: float
    std_error: float
    trials: int
    seed: int
    generator: str = GENERATOR

    def __iter__(self):
        return iter((self.estimate, self.std_error))

    def confidence_interval(self, level: float = 0.99) -> tuple[float, float]:
        return confidence_interval(self.estimate, self.std_error, level)


def confidence_interval(estimate: float, std_error: float, level: float = 0.99) -> tuple[float, float]:
    """Two-sided normal confidence interval clipped to ``[0, 1]``."""
    if not 0 < level < 1:
        raise InvalidParameterError(f"confidence level must lie in (0, 1), got {level}")
    z = norm.ppf(0.5 + level / 2.0)
    return max(0.0, estimate - z * std_error), min(1.0, estimate + z * std_error)


def _block_sizes(trials: int) -> list[int]:
    full, rest = divmod(trials, BLOCK_SIZE)
    return [BLOCK_SIZE] * full + ([rest] if rest else [])


def _count_ruins(n: int, q: float, K: float, assets: float, size: int, seed: np.random.SeedSequence) -> int:
    rng = np.random.default_rng(seed)
    claims = rng.binomial(n, q, size=size)
    return int(np.count_nonzero(claims * K > assets))


def estimate_ruin_probability(spec: SimulationSpec, jobs: int = 1) -> RuinEstimate:
    """
    Fraction of simulated portfolios whose total claims exceed ``C + nP``.

    Trials are drawn in fixed-size blocks, each from its own child of ``SeedSequence(seed)``,
    so the estimate does not depend on ``jobs``.
    """
    params = spec.params
    assets = spec.capital + spec.n * spec.premium
    sizes = _block_sizes(spec.trials)
    children = np.random.SeedSequence(spec.seed).spawn(len(sizes))

    counts = Parallel(n_jobs=jobs)(
        delayed(_count_ruins)(spec.n, params.q, params.K, assets, size, child) for size, child in zip(sizes, children)
    )
    estimate = sum(counts) / spec.trials
    std_error = math.sqrt(estimate * (1.0 - estimate) / spec.trials)
    logger.debug(f"n={spec.n}: {sum(counts)} ruins in {spec.trials} trials")
    return RuinEstimate(estimate=estimate, std_error=std_error, trials=spec.trials, seed=spec.seed)


def premium_schedule(params: MarketParams, rule: str | float | Callable[[int], float]) -> Callable[[int], float]:
    """
    The premium charged at each portfolio size: 'net', 'monopoly', a fixed number or a callable.
    """
    if callable(rule):
        return rule
    if rule == "net":
        return lambda n: params.net_premium
    if rule == "monopoly":
        return lambda n: p_m(params)
    try:
        value = float(rule)
    except (TypeError, ValueError):
        raise InvalidParameterError(f"unknown premium rule '{rule}'")
    return lambda n: value


def approximation_error_profile(
    params: MarketParams,
    n_list: Sequence[int],
    premium_rule: str | Callable[[int], float] = "net",
    trials: int = 100_000,
    seed: int = 0,
    jobs: int = 1,
) -> pd.DataFrame:
    """
    Ruin frequency at exactly the required capital for a range of portfolio sizes.

    Args:
        params (MarketParams): The market.
        n_list (Sequence[int]): Portfolio sizes.
        premium_rule (str | Callable, optional): ``"net"`` for ``qK``, ``"monopoly"`` for ``2qK``,
            or a function of ``n``. Defaults to ``"net"``.
        trials (int, optional): Trials per portfolio size.
        seed (int, optional): Seed shared by every portfolio size.
        jobs (int, optional): Parallel workers.

    Returns:
        pd.DataFrame: One row per ``n`` with the estimate, its standard error and ``|estimate - 0.005|``.
    """
    if len(n_list) == 0:
        raise InvalidParameterError("at least one portfolio size is required")
    rule = premium_schedule(params, premium_rule)
    records = []
    for n in n_list:
        premium = rule(n)
        capital = mcr(params, n, premium)
        spec = SimulationSpec(params=params, n=n, premium=premium, capital=capital, trials=trials, seed=seed)
        result = estimate_ruin_probability(spec, jobs=jobs)
        records.append(
            dict(
                n=spec.n,
                premium=premium,
                capital=capital,
                trials=trials,
                estimate=result.estimate,
                std_error=result.std_error,
                abs_error=abs(result.estimate - TARGET_RUIN),
                seed=seed,
                generator=result.generator,
            )
        )
    return pd.DataFrame.from_records(records)
