"""
Grid evaluation of the capital game over ranges of market parameters.
"""
import json
import logging
import math
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd
from attrs import define, field
from joblib import Parallel, delayed
from rich.progress import Progress, TimeElapsedColumn, MofNCompleteColumn

from .bimatrix import (
    DEFAULT_MAX_SUPPORT,
    BimatrixGame,
    EquilibriumType,
    SupportEnumeration,
    best_response_certificate,
)
from .exante import PayoffConvention, build_payoff_matrix, capital_grid, check_viable, zero_profit_capital
from .exceptions import InvalidParameterError, MarketNotViableError, SolvencyGameError
from .market import DEFAULT_PHI, Branch, MarketParams, branch_of_intersection

logger = logging.getLogger(__name__)

REFERENCE_COUNTS = {"Type1": 326, "Type2": 976, "Type3": 564}
TYPE_COLUMNS = ["type1", "type2", "type3"]
RECORD_COLUMNS = [
    "alpha", "q", "K", "r", "status", "branch", "c_1z", *TYPE_COLUMNS, "equilibria", "degenerate_supports", "diagnostic"
]


class BranchFilter(str, Enum):
    ALL_INCREASING = "all-increasing"
    ALL_DECREASING = "all-decreasing"
    ANY = "any"


class TupleStatus(str, Enum):
    SKIPPED = "skipped"
    FILTERED_OUT = "filtered-out"
    PASSED = "passed"
    FAILED = "failed"


@define(frozen=True)
class ParameterRange:
    """Values from ``min`` in steps of ``step`` while they do not exceed ``max``."""

    min: float = field(converter=float)
    max: float = field(converter=float)
    step: float = field(converter=float)

    def __attrs_post_init__(self):
        if self.min > self.max:
            raise InvalidParameterError(f"range minimum {self.min} exceeds maximum {self.max}")
        if not self.step > 0:
            raise InvalidParameterError(f"range step must be positive, got {self.step}")

    def values(self) -> list[float]:
        count = math.floor((self.max - self.min) / self.step + 1e-9) + 1
        return [round(self.min + k * self.step, 10) for k in range(count)]


@define(frozen=True)
class SweepConfig:
    alpha: ParameterRange = ParameterRange(90, 200, 20)
    q: ParameterRange = ParameterRange(0.01, 0.2, 0.04)
    K: ParameterRange = ParameterRange(100, 1000, 200)
    r: ParameterRange = ParameterRange(0.01, 0.3, 0.05)
    grid_size: int = 20
    branch_filter: BranchFilter = field(default=BranchFilter.ALL_INCREASING, converter=BranchFilter)
    tolerance: float = 1e-8
    phi: float = DEFAULT_PHI
    max_support: int | None = DEFAULT_MAX_SUPPORT
    convention: PayoffConvention = field(default=PayoffConvention.WORST_CASE, converter=PayoffConvention)

    def __attrs_post_init__(self):
        if self.grid_size < 2:
            raise InvalidParameterError("the capital grid needs at least two levels")
        if not self.tolerance > 0:
            raise InvalidParameterError("solver tolerance must be positive")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "SweepConfig":
        """
        Builds a configuration from ``key=value`` settings such as ``alpha_min``, ``alpha_step``, ``grid_size``
        or ``filter``. Missing keys keep their defaults.
        """
        defaults = cls()
        kwargs = {}
        for name in ("alpha", "q", "K", "r"):
            current = getattr(defaults, name)
            kwargs[name] = ParameterRange(
                values.get(f"{name}_min", current.min),
                values.get(f"{name}_max", current.max),
                values.get(f"{name}_step", current.step),
            )
        if "grid_size" in values:
            kwargs["grid_size"] = int(values["grid_size"])
        if "filter" in values:
            kwargs["branch_filter"] = values["filter"]
        if "tolerance" in values:
            kwargs["tolerance"] = float(values["tolerance"])
        if "phi" in values:
            kwargs["phi"] = float(values["phi"])
        if "max_support" in values:
            value = str(values["max_support"]).strip().lower()
            kwargs["max_support"] = None if value in ("", "none", "all") else int(value)
        return cls(**kwargs)


def parameter_grid(config: SweepConfig) -> list[tuple[float, float, float, float]]:
    """All ``(alpha, q, K, r)`` tuples of the configuration, in canonical order."""
    return list(product(config.alpha.values(), config.q.values(), config.K.values(), config.r.values()))


def _branch_label(branches: set[Branch]) -> str:
    if branches == {Branch.INCREASING}:
        return "increasing"
    if branches == {Branch.DECREASING}:
        return "decreasing"
    return "mixed"


def _passes(config: SweepConfig, label: str) -> bool:
    if config.branch_filter == BranchFilter.ALL_INCREASING:
        return label == "increasing"
    if config.branch_filter == BranchFilter.ALL_DECREASING:
        return label == "decreasing"
    return True


def evaluate_tuple(config: SweepConfig, alpha: float, q: float, K: float, r: float) -> dict:
    """Evaluates one parameter tuple and returns its record. Failures are recorded rather than raised."""
    record = dict(
        alpha=alpha,
        q=q,
        K=K,
        r=r,
        status=TupleStatus.SKIPPED.value,
        branch="",
        c_1z=np.nan,
        type1=0,
        type2=0,
        type3=0,
        equilibria=0,
        degenerate_supports=0,
        diagnostic="",
    )
    try:
        params = MarketParams(q=q, K=K, alpha=alpha, r=r, phi=config.phi)
        check_viable(params)
    except MarketNotViableError as error:
        record["diagnostic"] = str(error)
        return record

    try:
        c_1z = zero_profit_capital(params)
        levels = capital_grid(c_1z, config.grid_size)
        label = _branch_label({branch_of_intersection(params, level) for level in levels[1:]})
        record.update(c_1z=c_1z, branch=label)
        if not _passes(config, label):
            record["status"] = TupleStatus.FILTERED_OUT.value
            return record

        matrix = build_payoff_matrix(params, levels, convention=config.convention)
        game = BimatrixGame.from_payoff_matrix(matrix)
        solver = SupportEnumeration(tolerance=config.tolerance, max_support=config.max_support)
        report = solver.solve(game)
        uncertified = [eq for eq in report.equilibria if not best_response_certificate(game, eq, config.tolerance)]
        if uncertified:
            raise SolvencyGameError(f"{len(uncertified)} equilibria fail the best-response certificate")

        counts = {eq_type: 0 for eq_type in EquilibriumType}
        for equilibrium in report.equilibria:
            counts[equilibrium.eq_type] += 1
        record.update(
            status=TupleStatus.PASSED.value,
            type1=counts[EquilibriumType.TYPE1],
            type2=counts[EquilibriumType.TYPE2],
            type3=counts[EquilibriumType.TYPE3],
            equilibria=len(report.equilibria),
            degenerate_supports=report.degenerate_supports,
        )
    except SolvencyGameError as error:
        logger.warning(f"tuple alpha={alpha}, q={q}, K={K}, r={r} failed: {error}")
        record.update(status=TupleStatus.FAILED.value, diagnostic=str(error))
    return record


@define
class SweepResult:
    """Per-tuple records of a sweep, sorted by ``(alpha, q, K, r)``."""

    records: pd.DataFrame

    def status_counts(self) -> dict[str, int]:
        counts = self.records["status"].value_counts()
        return {status.value: int(counts.get(status.value, 0)) for status in TupleStatus}

    def summary(self) -> dict:
        distribution = type_distribution(self)
        return dict(
            tuples=len(self.records),
            statuses=self.status_counts(),
            types={"Type1": distribution[0], "Type2": distribution[1], "Type3": distribution[2]},
            total_equilibria=distribution[3],
            reference_types=REFERENCE_COUNTS,
        )

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        self.records.to_csv(path, index=False, float_format="%.17g")
        return path

    def write_summary(self, path: Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return path


def type_distribution(result: SweepResult) -> tuple[int, int, int, int]:
    """Number of Type 1, Type 2 and Type 3 equilibria over the passing tuples, and their total."""
    if result.records.empty:
        return (0, 0, 0, 0)
    passed = result.records[result.records["status"] == TupleStatus.PASSED.value]
    counts = [int(passed[column].sum()) for column in TYPE_COLUMNS]
    return (*counts, sum(counts))


def run_sweep(config: SweepConfig, jobs: int = 1, progress: bool = True) -> SweepResult:
    """
    Evaluates every parameter tuple of ``config`` with up to ``jobs`` workers.

    The records are sorted canonically, so the result does not depend on scheduling.
    """
    tuples = parameter_grid(config)
    records = []
    with Progress(
        *Progress.get_default_columns(), TimeElapsedColumn(), MofNCompleteColumn(), disable=not progress
    ) as bar:
        task = bar.add_task("[bold red]Sweeping parameters", total=len(tuples))
        parallel = Parallel(n_jobs=jobs, return_as="generator")
        for record in parallel(delayed(evaluate_tuple)(config, *values) for values in tuples):
            records.append(record)
            bar.update(task, advance=1)

    df = pd.DataFrame.from_records(records, columns=RECORD_COLUMNS)
    if not df.empty:
        df = df.sort_values(["alpha", "q", "K", "r"], kind="stable").reset_index(drop=True)
    return SweepResult(records=df)
