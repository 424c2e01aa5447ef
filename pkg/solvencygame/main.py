import json
import logging
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd
import typer
from attrs import asdict, evolve
from rich.console import Console
from rich.logging import RichHandler

from .adjustment import expost_equilibrium
from .bimatrix import (
    DEFAULT_MAX_SUPPORT,
    BimatrixGame,
    SupportEnumeration,
    best_response_certificate,
    equilibria_frame,
)
from .equilibrium import LowerBound, PremiumGrid, firm_duopoly, symmetric_equilibrium
from .exante import (
    PayoffConvention,
    PayoffMatrix,
    build_payoff_matrix,
    capital_grid,
    check_viable,
    monopoly_capital,
    pure_ne_classification,
    zero_profit_capital,
)
from .exceptions import ClassificationError, InvalidParameterError, MarketNotViableError, NumericalError
from .io import RunManifest, read_config, write_frame, write_json
from .market import (
    CapitalizedFirm,
    MarketParams,
    demand_intersection,
    expected_profit,
    isoprofit_premium,
    max_demand,
    mpr,
    mpr_exceeds_claim,
    p_l,
    p_u,
    zero_profit_premium,
)
from .simulation import SimulationSpec, approximation_error_profile, estimate_ruin_probability, premium_schedule
from .sweep import BranchFilter, SweepConfig, run_sweep
from .utils import parse_floats, parse_ints, parse_levels

logger = logging.getLogger("solvencygame")

app = typer.Typer(pretty_exceptions_enable=False)

EXIT_INVALID = 2
EXIT_NOT_VIABLE = 3
EXIT_NUMERICAL = 4

CONFIG_OPTION = typer.Option(None, "--config", help="A file of key=value lines. Command-line flags take precedence.")
Q_OPTION = typer.Option(None, "--q", help="The claim probability.")
K_OPTION = typer.Option(None, "--K", help="The loss size.")
ALPHA_OPTION = typer.Option(None, "--alpha", help="The demand scale.")
R_OPTION = typer.Option(None, "--r", help="The interest rate.")
PHI_OPTION = typer.Option(None, "--phi", help="The solvency quantile.")
PENALTY_B_OPTION = typer.Option(None, "--penalty-B", help="The fixed cost of raising capital ex post.")


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", help="Show debug messages.")) -> None:
    """Equilibria of an insurance market in which premiums are constrained by solvency capital."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


@contextmanager
def exit_codes():
    """Converts package errors into the exit codes of the command-line interface."""
    try:
        yield
    except MarketNotViableError as error:
        logger.error(str(error))
        raise typer.Exit(code=EXIT_NOT_VIABLE)
    except NumericalError as error:
        logger.error(str(error))
        raise typer.Exit(code=EXIT_NUMERICAL)
    except (InvalidParameterError, ClassificationError, ValueError) as error:
        logger.error(str(error))
        raise typer.Exit(code=EXIT_INVALID)


def _settings(config: Path | None) -> dict[str, str]:
    if config is None:
        return {}
    settings = read_config(config)
    if "k" in settings and "K" not in settings:
        settings["K"] = settings.pop("k")
    return settings


def _value(flag, settings: dict, key: str, convert=float):
    if flag is not None:
        return flag
    if key in settings:
        return convert(settings[key])
    return None


def _market(settings: dict, q=None, K=None, alpha=None, r=None, phi=None, penalty_B=None) -> MarketParams:
    values = dict(q=q, K=K, alpha=alpha, r=r, phi=phi, adjust_cost_B=penalty_B)
    keys = dict(q="q", K="K", alpha="alpha", r="r", phi="phi", adjust_cost_B="penalty_B")
    resolved = {name: _value(values[name], settings, keys[name]) for name in values}
    missing = [name for name in ("q", "K", "alpha") if resolved[name] is None]
    if missing:
        raise InvalidParameterError(f"missing market parameters: {', '.join(missing)}")
    return MarketParams(**{name: value for name, value in resolved.items() if value is not None})


def _capitals(capital: list[float] | None, settings: dict) -> list[float]:
    if capital:
        return list(capital)
    if "capital" in settings:
        return parse_floats(settings["capital"])
    return []


def _finish(command: str, params: MarketParams | None, outputs: list[Path], seed: int | None = None, **extra):
    parameters = asdict(params) if params is not None else {}
    parameters.update(extra)
    for output in outputs:
        RunManifest(command=command, parameters=parameters, seed=seed, outputs=outputs).write(output)
        print(f"Written '{output}'")


@app.command()
def curves(
    out: Path = typer.Option(..., "--out", help="The file to write."),
    capital: list[float] = typer.Option(None, "--capital", help="Capital of a firm. Repeat for several curves."),
    n_min: float = typer.Option(1.0, help="Smallest number of policies."),
    n_max: float = typer.Option(None, help="Largest number of policies. Defaults to the maximal demand."),
    points: int = typer.Option(200, help="Number of policy counts."),
    config: Path = CONFIG_OPTION,
    q: float = Q_OPTION,
    K: float = K_OPTION,
    alpha: float = ALPHA_OPTION,
    r: float = R_OPTION,
    phi: float = PHI_OPTION,
) -> None:
    """
    Writes the demand, MPR, iso-profit and zero-profit curves over a range of policy counts as CSV.

    Args:
        out (Path): The CSV file to write.
        capital (list[float]): The capitals for which the firm-specific curves are computed.
        n_min (float): The smallest number of policies.
        n_max (float, optional): The largest number of policies. Defaults to the maximal demand.
        points (int): The number of policy counts between ``n_min`` and ``n_max``.
        config (Path, optional): A key=value parameter file.
    """
    with exit_codes():
        settings = _settings(config)
        params = _market(settings, q, K, alpha, r, phi)
        capitals = _capitals(capital, settings)
        if not capitals:
            raise InvalidParameterError("at least one capital is required")
        if n_max is None:
            n_max = max_demand(params)
        if not 0 < n_min <= n_max:
            raise InvalidParameterError(f"invalid policy range [{n_min}, {n_max}]")
        if points < 1:
            raise InvalidParameterError("at least one point is required")

        n = np.linspace(n_min, n_max, points) if points > 1 else np.array([n_min])
        df = pd.DataFrame(dict(n=n))
        df["demand_premium"] = np.where(n <= max_demand(params) * (1 + 1e-12), params.alpha / np.sqrt(n), np.nan)
        for level in capitals:
            label = f"{level:g}"
            point = demand_intersection(params, level)
            profit = expected_profit(params, level, point.premium, point.n, capital_ok=True)
            df[f"mpr_{label}"] = np.atleast_1d(mpr(params, n, level))
            df[f"mpr_invalid_{label}"] = np.atleast_1d(mpr_exceeds_claim(params, n, level))
            df[f"isoprofit_{label}"] = np.atleast_1d(isoprofit_premium(params, level, n, profit))
            df[f"zero_profit_{label}"] = np.atleast_1d(zero_profit_premium(params, n, params.r * level))

        write_frame(df, out)
        _finish("curves", params, [out], capitals=capitals, n_min=n_min, n_max=n_max, points=points)


@app.command()
def equilibrium(
    out: Path = typer.Option(None, "--out", help="A JSON file for the report. Printed if omitted."),
    symmetric: bool = typer.Option(False, "--symmetric", help="Every firm holds the same capital."),
    asymmetric: bool = typer.Option(False, "--asymmetric", help="A duopoly with a small and a large firm."),
    expost: bool = typer.Option(False, "--expost", help="Capital can be raised after the premium stage."),
    capital: list[float] = typer.Option(None, "--capital", help="Capital of a firm. Give two for --asymmetric."),
    firms: int = typer.Option(None, "--firms", "-I", help="Number of firms."),
    premiums: str = typer.Option(None, "--premiums", help="Discrete premium grid, comma separated or a file."),
    lower_bound: LowerBound = typer.Option(LowerBound.BOUNDED, help="Convention for the lowest premium."),
    config: Path = CONFIG_OPTION,
    q: float = Q_OPTION,
    K: float = K_OPTION,
    alpha: float = ALPHA_OPTION,
    r: float = R_OPTION,
    phi: float = PHI_OPTION,
    penalty_B: float = PENALTY_B_OPTION,
) -> None:
    """
    Computes the premium-stage equilibria for fixed capital.

    Args:
        out (Path, optional): Where to write the JSON report.
        symmetric (bool): Firms share a common capital (the default mode).
        asymmetric (bool): Two firms with different capital.
        expost (bool): Firms may raise capital at the fixed cost given by ``--penalty-B``.
        capital (list[float]): The capital of the firms.
        firms (int, optional): The number of firms. Defaults to 2.
        premiums (str, optional): A discrete premium grid.
    """
    with exit_codes():
        settings = _settings(config)
        params = _market(settings, q, K, alpha, r, phi, penalty_B)
        capitals = _capitals(capital, settings)
        firms = _value(firms, settings, "firms", int) or 2
        grid = None
        levels = parse_levels(premiums or settings.get("premiums"))
        if levels:
            grid = PremiumGrid(levels)

        if sum([symmetric, asymmetric, expost]) > 1:
            raise InvalidParameterError("choose only one of --symmetric, --asymmetric and --expost")

        if asymmetric:
            if len(capitals) != 2:
                raise InvalidParameterError("--asymmetric needs two capitals")
            small, high = sorted(capitals)
            result = firm_duopoly(params, [CapitalizedFirm(level) for level in capitals], grid=grid)
            report = dict(mode="asymmetric", capital_small=small, capital_high=high, **result.to_dict())
        else:
            if len(capitals) != 1:
                raise InvalidParameterError("a single capital is required")
            level = capitals[0]
            if expost:
                result = expost_equilibrium(params, level, firms, grid=grid)
                report = dict(mode="expost", capital=level, firms=firms, **result.to_dict())
            else:
                result = symmetric_equilibrium(params, level, firms, grid=grid, lower_bound=lower_bound)
                report = dict(
                    mode="symmetric",
                    capital=level,
                    firms=firms,
                    p_u=p_u(params, level),
                    p_l=p_l(params, level, firms),
                    **result.to_dict(),
                )

        if out is None:
            print(json.dumps(report, indent=2))
            return
        write_json(report, out)
        _finish("equilibrium", params, [out], capitals=capitals, firms=firms)


@app.command()
def payoff_matrix(
    out: Path = typer.Option(..., "--out", help="The file to write."),
    levels: str = typer.Option(None, "--levels", help="Capital levels, comma separated or a file."),
    grid_size: int = typer.Option(None, "--grid-size", help="Number of levels from 0 to the zero-profit capital."),
    decimals: int = typer.Option(None, "--decimals", help="Round to this many decimals for a human-readable table."),
    convention: PayoffConvention = typer.Option(PayoffConvention.WORST_CASE, help="Shared-market premium."),
    config: Path = CONFIG_OPTION,
    q: float = Q_OPTION,
    K: float = K_OPTION,
    alpha: float = ALPHA_OPTION,
    r: float = R_OPTION,
    phi: float = PHI_OPTION,
) -> None:
    """
    Builds the first-period payoff matrix of the capital game.

    Args:
        out (Path): A CSV or JSON file for the matrix.
        levels (str, optional): The capital levels. Defaults to an even grid ending at the zero-profit capital.
        grid_size (int, optional): The size of the default grid. Defaults to 20.
        decimals (int, optional): Rounds the CSV output.
        convention (PayoffConvention): How the shared premium is bounded.
    """
    with exit_codes():
        settings = _settings(config)
        params = _market(settings, q, K, alpha, r, phi)
        check_viable(params)
        capital_levels = parse_levels(levels or settings.get("levels"))
        if capital_levels is None:
            size = _value(grid_size, settings, "grid_size", int) or 20
            capital_levels = capital_grid(zero_profit_capital(params), size).tolist()

        matrix = build_payoff_matrix(params, capital_levels, convention=convention)
        if Path(out).suffix.lower() == ".json":
            matrix.to_json(out)
        else:
            matrix.to_csv(out, decimals=decimals)
        _finish("payoff-matrix", params, [out], levels=capital_levels, convention=convention.value)


@app.command()
def solve(
    game: Path = typer.Option(..., "--game", help="A payoff matrix written by payoff-matrix."),
    out: Path = typer.Option(..., "--out", help="The equilibria CSV to write."),
    tolerance: float = typer.Option(1e-8, "--tolerance", help="Tolerance on normalized payoffs."),
    max_support: int = typer.Option(DEFAULT_MAX_SUPPORT, help="Largest support size to enumerate."),
    all_supports: bool = typer.Option(False, "--all-supports", help="Enumerate every support size."),
    perturbation: float = typer.Option(0.0, help="Tie-breaking payoff perturbation for degenerate games."),
) -> None:
    """
    Finds the mixed Nash equilibria of a capital game written by ``payoff-matrix``.

    Args:
        game (Path): The payoff matrix as CSV or JSON.
        out (Path): A CSV file with one row per equilibrium and player.
        tolerance (float): The solver tolerance.
        max_support (int): The largest support size.
        all_supports (bool): Lift the support size bound. Slow once many strategies survive dominance.
        perturbation (float): Perturbation size, 0 to disable.
    """
    with exit_codes():
        print(f"Reading game '{game}'")
        matrix = PayoffMatrix.read(game)
        bimatrix = BimatrixGame.from_payoff_matrix(matrix)
        if all_supports:
            max_support = None
        solver = SupportEnumeration(tolerance=tolerance, max_support=max_support, perturbation=perturbation)
        report = solver.solve(bimatrix)
        for found in report.equilibria:
            if not best_response_certificate(bimatrix, found, tolerance):
                raise NumericalError("an equilibrium failed the best-response certificate")

        labels = [f"{level:g}" for level in matrix.capital_levels]
        write_frame(equilibria_frame(report.equilibria, labels), out)
        print(f"Found {len(report.equilibria)} equilibria ({report.degenerate_supports} degenerate supports)")
        _finish("solve", None, [out], game=str(game), tolerance=tolerance, max_support=max_support)


@app.command()
def sweep(
    out: Path = typer.Option(..., "--out", help="The file to write."),
    filter: BranchFilter = typer.Option(None, "--filter", help="Which branch configurations to keep."),
    grid_size: int = typer.Option(None, "--grid-size", help="Number of capital levels per tuple."),
    tolerance: float = typer.Option(None, "--tolerance", help="Solver tolerance."),
    phi: float = PHI_OPTION,
    jobs: int = typer.Option(1, "--jobs", help="Number of parallel workers."),
    config: Path = CONFIG_OPTION,
) -> None:
    """
    Solves the capital game for every tuple of a parameter grid.

    The grid ranges come from ``--config`` (``alpha_min``, ``alpha_max``, ``alpha_step`` and the same for ``q``,
    ``K`` and ``r``) and default to the reference grid.

    Args:
        out (Path): The per-tuple CSV. A summary JSON is written beside it.
        filter (BranchFilter, optional): Branch filter. Defaults to all-increasing.
        grid_size (int, optional): Capital levels per tuple. Defaults to 20.
        tolerance (float, optional): Solver tolerance.
        jobs (int): Number of parallel workers.
    """
    with exit_codes():
        sweep_config = SweepConfig.from_mapping(_settings(config))
        overrides = dict(branch_filter=filter, grid_size=grid_size, tolerance=tolerance, phi=phi)
        sweep_config = evolve(sweep_config, **{k: v for k, v in overrides.items() if v is not None})

        result = run_sweep(sweep_config, jobs=jobs)
        out = result.to_csv(out)
        summary = result.write_summary(out.with_name(f"{out.stem}.summary.json"))
        counts = result.summary()
        print(f"{counts['statuses']['passed']} of {counts['tuples']} tuples passed; types {counts['types']}")
        _finish("sweep", None, [out, summary], config=asdict(sweep_config), jobs=jobs)


@app.command()
def simulate(
    out: Path = typer.Option(..., "--out", help="The file to write."),
    n: str = typer.Option("100,1000,10000", "--n", help="Portfolio sizes, comma separated or start:stop:step."),
    premium: str = typer.Option("net", help="'net', 'monopoly' or a number."),
    capital: float = typer.Option(None, "--capital", help="Capital to test instead of the required capital."),
    trials: int = typer.Option(100_000, help="Trials per portfolio size."),
    seed: int = typer.Option(None, "--seed", help="Random seed. Defaults to 0."),
    jobs: int = typer.Option(1, "--jobs", help="Number of parallel workers."),
    config: Path = CONFIG_OPTION,
    q: float = Q_OPTION,
    K: float = K_OPTION,
    alpha: float = ALPHA_OPTION,
    r: float = R_OPTION,
    phi: float = PHI_OPTION,
) -> None:
    """
    Estimates by simulation how often a portfolio backed by its required capital is ruined.

    Args:
        out (Path): The CSV of estimates.
        n (str): The portfolio sizes.
        premium (str): The premium rule.
        capital (float, optional): A fixed capital to test for every portfolio size.
        trials (int): Trials per portfolio size.
        seed (int): Random seed.
        jobs (int): Number of parallel workers.
    """
    with exit_codes():
        settings = _settings(config)
        params = _market(settings, q, K, alpha, r, phi)
        sizes = parse_ints(n)
        seed = _value(seed, settings, "seed", int) or 0
        rule = premium_schedule(params, premium)

        if capital is None:
            df = approximation_error_profile(params, sizes, premium_rule=rule, trials=trials, seed=seed, jobs=jobs)
        else:
            records = []
            for size in sizes:
                value = rule(size)
                spec = SimulationSpec(params=params, n=size, premium=value, capital=capital, trials=trials, seed=seed)
                estimate = estimate_ruin_probability(spec, jobs=jobs)
                low, high = estimate.confidence_interval()
                records.append(
                    dict(
                        n=size,
                        premium=value,
                        capital=capital,
                        trials=trials,
                        estimate=estimate.estimate,
                        std_error=estimate.std_error,
                        ci_low=low,
                        ci_high=high,
                        seed=seed,
                    )
                )
            df = pd.DataFrame.from_records(records)

        write_frame(df, out)
        _finish("simulate", params, [out], seed=seed, n=sizes, premium=premium, capital=capital, trials=trials)


@app.command()
def thresholds(
    out: Path = typer.Option(None, "--out", help="A JSON file for the thresholds. Printed if omitted."),
    config: Path = CONFIG_OPTION,
    q: float = Q_OPTION,
    K: float = K_OPTION,
    alpha: float = ALPHA_OPTION,
    r: float = R_OPTION,
    phi: float = PHI_OPTION,
) -> None:
    """
    Reports the threshold capitals and premiums of the capital game and whether a pure equilibrium exists.

    Args:
        out (Path, optional): Where to write the JSON report.
    """
    with exit_codes():
        params = _market(_settings(config), q, K, alpha, r, phi)
        classification = pure_ne_classification(params)
        c_mc, p_mc = monopoly_capital(params)
        report = dict(
            thresholds=classification.thresholds.to_dict(),
            classification=classification.kind.value,
            entry_capital=classification.entry_capital,
            entry_premium=classification.entry_premium,
            monopoly_capital=c_mc,
            monopoly_premium=p_mc,
        )
        if out is None:
            print(json.dumps(report, indent=2, default=str))
            return
        write_json(report, out)
        _finish("thresholds", params, [out])
