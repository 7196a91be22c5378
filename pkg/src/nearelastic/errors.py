"""Exception hierarchy.

Every error carries the process exit code the command line uses for its class.
"""


class NearElasticError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(NearElasticError, ValueError):
    """Malformed input or a violated model invariant.

    Parameters
    ----------
    message : str
        Human readable description.
    line, column : int, optional
        1-based location in the config text, when known.
    """

    exit_code = 2

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            loc = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{loc}: {message}"
        super().__init__(message)


class TopologyError(ConfigError):
    """Degenerate well geometry (ties, bad nesting, floors above walls)."""


class HypothesisError(NearElasticError):
    """A method was called outside the assumptions it relies on."""

    exit_code = 3


class SamplingUnsupported(HypothesisError):
    """The distribution family has no density and cannot be simulated."""


class NoUphillError(HypothesisError):
    """The kick sum is a.s. nonnegative, so the energy can never climb."""


class TieError(HypothesisError):
    """Non-generic landscape: a tie decides how cycles form."""


class NumericError(NearElasticError, ArithmeticError):
    """Quadrature, root finding or simulation failed numerically."""

    exit_code = 4


class CapExceeded(NumericError):
    """The particle energy exceeded the configured cap."""


class NoDecision(NumericError):
    """The particle did not settle in a leaf before the collision budget ran out."""


class EnvelopeError(NumericError):
    """Rejection sampling efficiency fell below the accepted floor."""


class InvariantFailure(NearElasticError):
    """A checked invariant does not hold."""

    exit_code = 5


class GridTooCoarse(NumericError):
    """Lattice mass conservation failed beyond tolerance."""
