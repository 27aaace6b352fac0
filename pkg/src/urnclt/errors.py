"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`UrnError`.
Input problems derive from :class:`InputError` and numerical-method problems
from :class:`NumericalError`; the CLI maps the two families to exit codes
2 and 3.
"""


class UrnError(Exception):
    """Base class for all package errors."""


class InputError(UrnError, ValueError):
    """Invalid user-supplied data."""


class NumericalError(UrnError, ArithmeticError):
    """A numerical method could not deliver a result of the promised quality."""


class ParseError(InputError):
    """A model or manifest file could not be parsed."""


class NotStochastic(InputError):
    """Negative entries or row sums different from one."""


class NotIrreducible(InputError):
    """The directed graph of positive entries is not strongly connected."""


class SingularCombination(InputError):
    """The combination matrix is not invertible."""


class DomainError(InputError):
    """An argument lies outside the domain of a formula (e.g. n < 2)."""


class MissingCheckpoint(InputError):
    """A statistic was requested at a step that was not recorded."""


class NotEigenvectorColumn(InputError):
    """A column belongs to a block for which the scalar recursion is not valid."""


class NotSupercritical(InputError):
    """A supercritical-only routine received a block of another regime."""


class NotScalarBlock(InputError):
    """A routine restricted to real one-dimensional blocks got a larger block."""


class DegenerateVariance(InputError):
    """A test statistic needs a strictly positive variance."""


class UnstableA(NumericalError):
    """A Lyapunov coefficient matrix has an eigenvalue with nonpositive real part."""


class NonConvergence(NumericalError):
    """An iterative method stalled."""


class DefectiveOrClustered(NumericalError):
    """Eigenvalues are too close to build a diagonalizable spectral decomposition."""
