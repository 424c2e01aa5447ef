from .exceptions import (
    SolvencyGameError,
    InvalidParameterError,
    MarketNotViableError,
    NumericalError,
    ClassificationError,
)
from .market import MarketParams, Branch, CurvePoint
from .equilibrium import EquilibriumKind, EquilibriumSet, PremiumGrid, Regime, symmetric_equilibrium, asymmetric_duopoly
from .adjustment import AdjustmentOutcome, AdjustmentRegime, expost_equilibrium
from .exante import PayoffConvention, PayoffMatrix, build_payoff_matrix, thresholds, pure_ne_classification
from .bimatrix import BimatrixGame, EquilibriumType, MixedEquilibrium, SupportEnumeration, enumerate_equilibria
from .sweep import SweepConfig, SweepResult, run_sweep
from .simulation import SimulationSpec, RuinEstimate, estimate_ruin_probability

__version__ = "0.1.0"
