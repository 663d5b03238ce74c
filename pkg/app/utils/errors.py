"""
Exception types raised by the solver stack.

Shape and parameter problems are ``ValueError``s; numerical trouble inside
the iterations is an ``ArithmeticError``. Everything shares ``CgVampError``
so callers can stop a run on any solver failure with a single except clause.
"""


class CgVampError(Exception):
    """Base class for solver errors."""


class InvalidShapeError(CgVampError, ValueError):
    """Dimensions are inconsistent (m > n, vector length mismatch)."""


class InvalidParameterError(CgVampError, ValueError):
    """A scalar parameter is out of its admissible range."""


class NumericInputError(CgVampError, ValueError):
    """An input vector carries NaN or infinite entries."""


class NumericalBreakdownError(CgVampError, ArithmeticError):
    """CG curvature <p, W p> is not positive."""


class DivisionDegenerateError(CgVampError, ArithmeticError):
    """A variance the recursion divides by is zero."""


class UndefinedEstimateError(CgVampError, ArithmeticError):
    """An estimator is asked for a value it cannot define (gamma = 0)."""


class OnsagerDegenerateError(CgVampError, ArithmeticError):
    """Denoiser divergence too close to one for the Block B correction."""


class BlockADegenerateError(CgVampError, ArithmeticError):
    """Block A correction scalar vanished."""


class SolverError(CgVampError, ArithmeticError):
    """Direct solve is numerically meaningless."""
