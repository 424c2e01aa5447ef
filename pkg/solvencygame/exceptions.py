class SolvencyGameError(Exception):
    """
    Base class for errors raised by solvencygame.

    Library code raises subclasses of this exception; the command-line interface converts them into exit codes.
    """

    pass


class InvalidParameterError(SolvencyGameError, ValueError):
    """Raised when an argument lies outside the domain of a formula (e.g. a non-positive capital or premium)."""

    pass


class MarketNotViableError(SolvencyGameError):
    """
    Raised when the interest rate is so high that no insurer can operate without financial loss.

    This happens when ``r >= r_max``.
    """

    pass


class NumericalError(SolvencyGameError, ArithmeticError):
    """Raised when an internal computation fails to produce a finite, consistent result."""

    pass


class ClassificationError(SolvencyGameError):
    """Raised when an asymmetric capital configuration falls outside the Case I / Case II taxonomy."""

    pass
