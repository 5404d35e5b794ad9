"""Exception hierarchy shared by all modules.

The CLI maps these onto process exit codes, so solver code should raise
the most specific class that applies.
"""


class PwrhfError(Exception):
    """Base class for all package errors."""


class ConfigError(PwrhfError):
    """Invalid or inconsistent run configuration (exit code 2)."""


class ConvergenceError(PwrhfError):
    """Iteration limit reached before the stopping rule fired (exit code 3)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MetallicError(PwrhfError):
    """Spectral gap at or below tolerance; occupied/virtual split is
    ill-defined (exit code 4)."""


class NumericalError(PwrhfError):
    """Eigensolver or other numerical kernel failed its own checks
    (exit code 5)."""


class DegenerateLatticeError(PwrhfError):
    """Lattice basis vectors are (numerically) linearly dependent."""


class NeutralityError(PwrhfError):
    """Coulomb kernel applied to a non-neutral charge distribution."""


class ResourceError(PwrhfError):
    """Requested computation exceeds a configured hard cap."""


class InsufficientDataError(PwrhfError):
    """Not enough usable data points for a fit."""
