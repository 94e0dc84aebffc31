"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and NumericalError (and its
subclasses) to exit code 3; everything else is a plain bug.
"""


class FracinvError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(FracinvError, ValueError):
    """An argument violates a documented precondition (bad alpha, rho, ...)."""


class DomainError(FracinvError, ValueError):
    """Evaluation requested outside the supported region."""


class ResolutionError(FracinvError, ValueError):
    """Requested resolution (modes, grid) exceeds what the discretization supports."""


class ShapeError(FracinvError, ValueError):
    """Mesh / field size mismatch."""


class NumericalError(FracinvError, RuntimeError):
    """A numerical computation failed (divergence, singular system, ...)."""


class DegenerateReferenceError(NumericalError):
    """All reference coefficients in the requested mode window are below threshold."""


class InconsistentDataError(NumericalError):
    """Data incompatible with the assumed decay structure (e.g. alpha=1-like degeneracy).

    Carries the estimated decay level so callers can inspect how degenerate
    the ratio sequence was.
    """

    def __init__(self, message, lambda_hat=None):
        super().__init__(message)
        self.lambda_hat = lambda_hat


class PositivityError(NumericalError):
    """A quantity required to stay positive dropped below its floor."""


class AdmissibilityError(NumericalError):
    """An iterate left the admissible set by more than the clamping tolerance."""


class InsufficientHistoryError(FracinvError, ValueError):
    """A time-history operation needs more stored steps than available."""


class ConfigError(FracinvError, ValueError):
    """Bad experiment configuration; carries file/line diagnostics when known."""

    def __init__(self, message, source=None, line=None):
        loc = ""
        if source is not None:
            loc = f" [{source}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.source = source
        self.line = line
