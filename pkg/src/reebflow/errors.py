"""Exception and warning classes shared across the package."""


class ReebflowError(Exception):
    """Base class for all package errors."""


class DomainError(ReebflowError, ValueError):
    """A point lies outside the evaluation domain."""


class GenericityError(ReebflowError):
    """A Hamiltonian violates a genericity requirement (e.g. degenerate critical point)."""


class BandOverlapError(ReebflowError):
    """Critical bands of distinct saddles merged; the grid is too coarse."""


class SingularIntegrandError(ReebflowError):
    """|grad H| vanished (numerically) on a level curve."""


class NearSingularError(ReebflowError):
    """Requested level is inside a critical band."""


class TableError(ReebflowError):
    """Coefficient table is missing data or contains non-finite values."""


class ParameterError(ReebflowError, ValueError):
    """Invalid parameter value."""


class NumericalError(ReebflowError):
    """A linear solve or iteration failed to converge."""


class StepSizeError(ReebflowError):
    """The deterministic advection substep drifted off the level set."""


class DivergenceError(ReebflowError):
    """A solution blew up."""


class ConfigError(ReebflowError, ValueError):
    """Invalid experiment or solver configuration."""


class PreconditionError(ReebflowError, ValueError):
    """An operation was called outside its domain of validity."""


class SymmetryError(ReebflowError, ValueError):
    """A spectral measure is not symmetric under lambda -> -lambda."""


class UnresolvedCellWarning(UserWarning):
    """Newton iteration from a grid seed did not converge."""


class AsymptoticsWarning(UserWarning):
    """The saddle log fit has a large residual."""


class CapTooLowWarning(UserWarning):
    """Too many Monte Carlo paths were stopped at the energy cap."""


class StepWarning(UserWarning):
    """Time step looks too large for the requested accuracy."""
