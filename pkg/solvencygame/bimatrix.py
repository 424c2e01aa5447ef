"""
Mixed Nash equilibria of finite two-player games by support enumeration.

Supports of equal size are enumerated for both players. Before the indifference systems are solved, strategies that
are strictly dominated are removed, and candidate supports are pruned by conditional dominance: a strategy cannot be
played if some other strategy is strictly better against every strategy in the opponent's support.
Dominance tests are run on integer bitmasks and the indifference systems are solved as stacks, both in batches.
In symmetric games only one of each mirrored support pair is solved.

Supports are capped at ``DEFAULT_MAX_SUPPORT`` strategies unless the solver is told otherwise.
"""
import logging
from enum import Enum
from itertools import combinations, islice
from typing import Iterator, Sequence

import numpy as np
import pandas as pd
from attrs import define, field

from .exante import PayoffMatrix
from .exceptions import InvalidParameterError

logger = logging.getLogger(__name__)

MAX_STRATEGIES = 25
DEFAULT_MAX_SUPPORT = 8
CONDITION_LIMIT = 1e12


class EquilibriumType(str, Enum):
    TYPE1 = "Type1"
    TYPE2 = "Type2"
    TYPE3 = "Type3"


def _as_matrix(value) -> np.ndarray:
    return np.array(value, dtype=float, ndmin=2)


@define(frozen=True, eq=False)
class BimatrixGame:
    """
    A finite two-player game.

    Attributes:
        payoff_row (np.ndarray): Row player's payoffs, shape ``(m, n)``.
        payoff_col (np.ndarray): Column player's payoffs, shape ``(m, n)``.
        labels (tuple | None): Strategy names shared by both players when the game is symmetric.
        zero_index (int | None): Index of the zero-capital strategy in a capital game.
    """

    payoff_row: np.ndarray = field(converter=_as_matrix)
    payoff_col: np.ndarray = field(converter=_as_matrix)
    labels: tuple | None = field(default=None, converter=lambda x: None if x is None else tuple(x))
    zero_index: int | None = None

    def __attrs_post_init__(self):
        if self.payoff_row.shape != self.payoff_col.shape:
            raise InvalidParameterError(
                f"payoff matrices differ in shape: {self.payoff_row.shape} and {self.payoff_col.shape}"
            )
        if not (np.all(np.isfinite(self.payoff_row)) and np.all(np.isfinite(self.payoff_col))):
            raise InvalidParameterError("payoffs must be finite")
        if self.zero_index is not None and not 0 <= self.zero_index < min(self.shape):
            raise InvalidParameterError(f"zero index {self.zero_index} is out of range")

    @property
    def shape(self) -> tuple[int, int]:
        return self.payoff_row.shape

    @classmethod
    def from_payoff_matrix(cls, matrix: PayoffMatrix) -> "BimatrixGame":
        """The symmetric capital game in which the column player's payoffs are the transpose of the row player's."""
        return cls(
            payoff_row=matrix.cells,
            payoff_col=matrix.column_payoffs,
            labels=tuple(float(level) for level in matrix.capital_levels),
            zero_index=matrix.zero_index,
        )

    def swapped(self) -> "BimatrixGame":
        """The same game with the roles of the players exchanged."""
        return BimatrixGame(
            payoff_row=self.payoff_col.T, payoff_col=self.payoff_row.T, labels=self.labels, zero_index=self.zero_index
        )


def _check_strategy(instance, attribute, value):
    if np.any(value < 0) or abs(value.sum() - 1.0) > 1e-9:
        raise InvalidParameterError(f"{attribute.name} must be a probability vector")


@define(frozen=True, eq=False)
class MixedEquilibrium:
    strategy_row: np.ndarray = field(converter=lambda x: np.asarray(x, dtype=float), validator=_check_strategy)
    strategy_col: np.ndarray = field(converter=lambda x: np.asarray(x, dtype=float), validator=_check_strategy)
    payoff_row: float
    payoff_col: float
    eq_type: EquilibriumType | None = None

    def support_row(self, tolerance: float = 1e-8) -> tuple[int, ...]:
        return tuple(int(i) for i in np.nonzero(self.strategy_row > tolerance)[0])

    def support_col(self, tolerance: float = 1e-8) -> tuple[int, ...]:
        return tuple(int(j) for j in np.nonzero(self.strategy_col > tolerance)[0])


@define
class SolverReport:
    equilibria: list[MixedEquilibrium]
    degenerate_supports: int = 0
    supports_solved: int = 0
    eliminated_rows: tuple[int, ...] = ()
    eliminated_cols: tuple[int, ...] = ()


def normalize(payoffs: np.ndarray) -> np.ndarray:
    """Shifts and scales a payoff matrix into ``[0, 1]``; a constant matrix becomes all zeros."""
    low, high = payoffs.min(), payoffs.max()
    if high - low <= 0:
        return np.zeros_like(payoffs)
    return (payoffs - low) / (high - low)


def _dominance_masks(payoffs: np.ndarray, tolerance: float) -> np.ndarray:
    """
    ``masks[s, t]`` has bit ``o`` set when strategy ``t`` earns strictly more than ``s``
    against opponent strategy ``o``.

    ``payoffs`` is indexed ``[own strategy, opponent strategy]``.
    """
    better = payoffs[None, :, :] > payoffs[:, None, :] + tolerance
    bits = np.left_shift(np.uint64(1), np.arange(payoffs.shape[1], dtype=np.uint64))
    return np.bitwise_or.reduce(np.where(better, bits, np.uint64(0)), axis=2)


def _dominated(masks: np.ndarray, opponent_sets: np.ndarray) -> np.ndarray:
    """For each strategy and each opponent set, whether some strategy beats it against the whole set."""
    hit = (masks[:, :, None] & opponent_sets[None, None, :]) == opponent_sets[None, None, :]
    return hit.any(axis=1)


def _batches(indices: Sequence[int], size: int, batch_size: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    iterator = combinations(indices, size)
    while True:
        chunk = list(islice(iterator, batch_size))
        if not chunk:
            return
        combos = np.array(chunk, dtype=np.uint64)
        masks = np.bitwise_or.reduce(np.left_shift(np.uint64(1), combos), axis=1)
        yield combos.astype(np.int64), masks


def _at_or_after(combos: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Whether each sorted combination is lexicographically at or after ``reference``."""
    diff = combos - reference
    differs = diff != 0
    first = differs.argmax(axis=1)
    return ~differs.any(axis=1) | (diff[np.arange(len(combos)), first] > 0)


def iterated_dominance(
    payoff_row: np.ndarray, payoff_col: np.ndarray, tolerance: float = 1e-8
) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the rows and columns that survive iterated removal of strictly dominated pure strategies."""
    rows = np.arange(payoff_row.shape[0])
    cols = np.arange(payoff_row.shape[1])
    changed = True
    while changed:
        changed = False
        block = payoff_row[np.ix_(rows, cols)]
        keep = ~np.any(np.all(block[None, :, :] > block[:, None, :] + tolerance, axis=2), axis=1)
        if not keep.all():
            rows = rows[keep]
            changed = True
        block = payoff_col[np.ix_(rows, cols)].T
        keep = ~np.any(np.all(block[None, :, :] > block[:, None, :] + tolerance, axis=2), axis=1)
        if not keep.all():
            cols = cols[keep]
            changed = True
    return rows, cols


def _solve_mixes(blocks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    For each ``(k, k)`` block in a stack, the mix over its columns that makes every row earn the same payoff.

    Returns the mixes and a mask of the systems that were well conditioned. Rows of ill-conditioned systems are NaN.
    """
    count, k, _ = blocks.shape
    systems = np.zeros((count, k + 1, k + 1))
    systems[:, :k, :k] = blocks
    systems[:, :k, k] = -1.0
    systems[:, k, :k] = 1.0
    rhs = np.zeros((count, k + 1, 1))
    rhs[:, k, 0] = 1.0
    with np.errstate(all="ignore"):
        solvable = np.linalg.cond(systems) <= CONDITION_LIMIT
    mixes = np.full((count, k), np.nan)
    if solvable.any():
        mixes[solvable] = np.linalg.solve(systems[solvable], rhs[solvable])[:, :k, 0]
    return mixes, solvable


def _is_best_response_pair(
    payoff_row: np.ndarray, payoff_col: np.ndarray, x: np.ndarray, y: np.ndarray, tolerance: float
) -> bool:
    row_values = payoff_row @ y
    col_values = x @ payoff_col
    row_value = x @ row_values
    col_value = col_values @ y
    if row_values.max() > row_value + tolerance or col_values.max() > col_value + tolerance:
        return False
    on_row = x > tolerance
    on_col = y > tolerance
    return bool(
        np.all(row_values[on_row] >= row_values.max() - tolerance)
        and np.all(col_values[on_col] >= col_values.max() - tolerance)
    )


def _classify(strategy_row: np.ndarray, strategy_col: np.ndarray, zero_index: int, tolerance: float) -> EquilibriumType:
    row_out = strategy_row[zero_index] > tolerance
    col_out = strategy_col[zero_index] > tolerance
    if not row_out and not col_out:
        return EquilibriumType.TYPE1
    if row_out and col_out:
        return EquilibriumType.TYPE3
    return EquilibriumType.TYPE2


def best_response_certificate(game: BimatrixGame, equilibrium: MixedEquilibrium, tolerance: float = 1e-8) -> bool:
    """
    Checks, in normalized payoffs, that no pure strategy beats the equilibrium payoff by more than ``tolerance``
    and that every strategy in the support attains it.
    """
    return _is_best_response_pair(
        normalize(game.payoff_row),
        normalize(game.payoff_col),
        equilibrium.strategy_row,
        equilibrium.strategy_col,
        tolerance,
    )


def classify_type(
    equilibrium: MixedEquilibrium, zero_index: int, tolerance: float = 1e-8
) -> EquilibriumType:
    """
    Type 1 when neither player can stay out, Type 3 when both may stay out, Type 2 otherwise.
    """
    if not 0 <= zero_index < min(equilibrium.strategy_row.size, equilibrium.strategy_col.size):
        raise InvalidParameterError(f"zero index {zero_index} is out of range")
    return _classify(equilibrium.strategy_row, equilibrium.strategy_col, zero_index, tolerance)


def _perturbation(shape: tuple[int, int], transpose: bool) -> np.ndarray:
    m, n = shape
    if transpose:
        ranks = np.arange(n)[None, :] * m + np.arange(m)[:, None]
    else:
        ranks = np.arange(m)[:, None] * n + np.arange(n)[None, :]
    return ranks / (m * n)


@define
class SupportEnumeration:
    """
    Support enumeration solver.

    Attributes:
        tolerance (float): Absolute tolerance in normalized payoff space.
        merge_tolerance (float): Strategy-space distance below which two equilibria are merged.
        max_support (int | None): Largest support size to enumerate. ``None`` enumerates every size,
            which grows combinatorially once more than a dozen strategies survive dominance.
        perturbation (float): Size of a deterministic payoff perturbation used to break ties in degenerate games.
            Zero disables it.
        batch_size (int): Number of candidate supports checked for dominance at once.
    """

    tolerance: float = 1e-8
    merge_tolerance: float = 1e-6
    max_support: int | None = DEFAULT_MAX_SUPPORT
    perturbation: float = 0.0
    batch_size: int = 4096

    def __attrs_post_init__(self):
        if not self.tolerance > 0:
            raise InvalidParameterError("tolerance must be positive")
        if self.max_support is not None and self.max_support < 1:
            raise InvalidParameterError("max_support must be at least 1")

    def solve(self, game: BimatrixGame) -> SolverReport:
        m, n = game.shape
        if m > MAX_STRATEGIES or n > MAX_STRATEGIES:
            raise InvalidParameterError(f"games are limited to {MAX_STRATEGIES} strategies per player")

        row = normalize(game.payoff_row)
        col = normalize(game.payoff_col)
        if self.perturbation > 0:
            row = row + self.perturbation * _perturbation(game.shape, transpose=False)
            col = col + self.perturbation * _perturbation(game.shape, transpose=True)

        rows, cols = iterated_dominance(row, col, self.tolerance)
        report = SolverReport(
            equilibria=[],
            eliminated_rows=tuple(int(i) for i in np.setdiff1d(np.arange(m), rows)),
            eliminated_cols=tuple(int(j) for j in np.setdiff1d(np.arange(n), cols)),
        )
        logger.debug(f"iterated dominance kept {rows.size} of {m} rows and {cols.size} of {n} columns")

        reduced_row = row[np.ix_(rows, cols)]
        reduced_col = col[np.ix_(rows, cols)]
        row_masks = _dominance_masks(reduced_row, self.tolerance)
        col_masks = _dominance_masks(reduced_col.T, self.tolerance)
        symmetric = np.array_equal(rows, cols) and np.array_equal(reduced_row, reduced_col.T)

        largest = min(rows.size, cols.size)
        if self.max_support is not None:
            largest = min(largest, self.max_support)

        found = []
        for size in range(1, largest + 1):
            for row_combos, row_sets in _batches(range(rows.size), size, self.batch_size):
                col_dominated = _dominated(col_masks, row_sets)
                undominated = ~col_dominated
                candidate_sets = np.bitwise_or.reduce(
                    np.where(
                        undominated,
                        np.left_shift(np.uint64(1), np.arange(cols.size, dtype=np.uint64))[:, None],
                        np.uint64(0),
                    ),
                    axis=0,
                )
                members = ((row_sets[None, :] >> np.arange(rows.size, dtype=np.uint64)[:, None]) & np.uint64(1)) == 1
                row_dominated = _dominated(row_masks, candidate_sets)
                alive = (undominated.sum(axis=0) >= size) & ~np.any(row_dominated & members, axis=0)

                for b in np.nonzero(alive)[0]:
                    support_row = row_combos[b]
                    candidates = np.nonzero(undominated[:, b])[0]
                    found.extend(
                        self._solve_row_support(
                            reduced_row, reduced_col, row_masks, support_row, candidates, size, symmetric, report
                        )
                    )

        equilibria = []
        for x_reduced, y_reduced in found:
            x = np.zeros(m)
            y = np.zeros(n)
            x[rows] = x_reduced
            y[cols] = y_reduced
            if not _is_best_response_pair(row, col, x, y, self.tolerance):
                continue
            if any(
                np.allclose(x, other.strategy_row, atol=self.merge_tolerance)
                and np.allclose(y, other.strategy_col, atol=self.merge_tolerance)
                for other in equilibria
            ):
                continue
            eq_type = None if game.zero_index is None else _classify(x, y, game.zero_index, self.tolerance)
            equilibria.append(
                MixedEquilibrium(
                    strategy_row=x,
                    strategy_col=y,
                    payoff_row=float(x @ game.payoff_row @ y),
                    payoff_col=float(x @ game.payoff_col @ y),
                    eq_type=eq_type,
                )
            )

        equilibria.sort(key=lambda eq: (eq.support_row(self.tolerance), eq.support_col(self.tolerance)))
        report.equilibria = equilibria
        if report.degenerate_supports:
            logger.info(f"skipped {report.degenerate_supports} degenerate support pairs")
        return report

    def _solve_row_support(
        self,
        row: np.ndarray,
        col: np.ndarray,
        row_masks: np.ndarray,
        support_row: np.ndarray,
        candidates: np.ndarray,
        size: int,
        symmetric: bool,
        report: SolverReport,
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        solutions = []
        m, n = row.shape
        own_masks = row_masks[support_row]
        own_row = row[support_row]
        own_col = col[support_row]
        for col_combos, col_sets in _batches(candidates.tolist(), size, self.batch_size):
            keep = ~_dominated(own_masks, col_sets).any(axis=0)
            if symmetric:
                # (T, S) mirrors (S, T), so only column supports at or after the row support are solved
                keep &= _at_or_after(col_combos, support_row)
            col_combos = col_combos[keep]
            if not len(col_combos):
                continue
            report.supports_solved += len(col_combos)

            # blocks are stacked as [support pair, row strategy, column strategy]
            y, solved = _solve_mixes(own_row[:, col_combos].transpose(1, 0, 2))
            report.degenerate_supports += int((~solved).sum())
            with np.errstate(invalid="ignore"):
                feasible = solved & (y.min(axis=1) >= -self.tolerance)
            if not feasible.any():
                continue
            col_combos = col_combos[feasible]
            y = y[feasible]

            x, solved = _solve_mixes(own_col[:, col_combos].transpose(1, 2, 0))
            report.degenerate_supports += int((~solved).sum())
            with np.errstate(invalid="ignore"):
                feasible = solved & (x.min(axis=1) >= -self.tolerance)
            if not feasible.any():
                continue
            col_combos = col_combos[feasible]

            x = np.clip(x[feasible], 0.0, None)
            y = np.clip(y[feasible], 0.0, None)
            x_full = np.zeros((len(x), m))
            y_full = np.zeros((len(y), n))
            x_full[:, support_row] = x / x.sum(axis=1, keepdims=True)
            np.put_along_axis(y_full, col_combos, y / y.sum(axis=1, keepdims=True), axis=1)

            row_values = y_full @ row.T
            col_values = x_full @ col
            stable = (row_values.max(axis=1) <= (x_full * row_values).sum(axis=1) + self.tolerance) & (
                col_values.max(axis=1) <= (y_full * col_values).sum(axis=1) + self.tolerance
            )
            solutions.extend(zip(x_full[stable], y_full[stable]))
            if symmetric:
                mirrored = stable & ~np.all(col_combos == support_row, axis=1)
                solutions.extend(zip(y_full[mirrored], x_full[mirrored]))
        return solutions


def enumerate_equilibria(game: BimatrixGame, tolerance: float = 1e-8, **options) -> list[MixedEquilibrium]:
    """
    All equilibria of ``game`` found by support enumeration, ordered by support.

    Keyword arguments are passed to :class:`SupportEnumeration`.
    """
    return SupportEnumeration(tolerance=tolerance, **options).solve(game).equilibria


def equilibria_frame(equilibria: Sequence[MixedEquilibrium], labels: Sequence | None = None) -> pd.DataFrame:
    """
    One row per equilibrium and player: the probability of every strategy and the expected payoff.

    Player 1 is the row player and player 2 the column player.
    """
    records = []
    for number, equilibrium in enumerate(equilibria, start=1):
        names = labels if labels is not None else range(equilibrium.strategy_row.size)
        for player, strategy, payoff in (
            (1, equilibrium.strategy_row, equilibrium.payoff_row),
            (2, equilibrium.strategy_col, equilibrium.payoff_col),
        ):
            record = dict(equilibrium=number, player=player)
            record.update({str(name): float(p) for name, p in zip(names, strategy)})
            record["expected_payoff"] = payoff
            record["type"] = equilibrium.eq_type.value if equilibrium.eq_type else ""
            records.append(record)
    return pd.DataFrame.from_records(records)
