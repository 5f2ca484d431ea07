"""Exception hierarchy shared by the solvers and the harness."""

from typing import Optional


class EFAError(Exception):
    """Base class for every error raised deliberately by this package."""


class ConfigurationError(EFAError):
    """Invalid or unknown configuration (coefficient name, experiment file, grid)."""


class CFLViolationError(ConfigurationError):
    """Time step exceeds the leap-frog stability bound."""

    def __init__(self, dt: float, dt_max: float, where: str):
        self.dt = dt
        self.dt_max = dt_max
        self.where = where
        super().__init__(
            f"{where}: time step {dt:.6g} violates the CFL bound {dt_max:.6g}"
        )


class PreconditionError(EFAError):
    """Input violates a documented precondition (grid shape, coverage, ranges)."""


class KernelConstructionError(EFAError):
    """The moment system for an averaging kernel could not be solved."""


class InstabilityError(EFAError):
    """Non-finite values, or unbounded growth, appeared while time stepping."""

    def __init__(self, where: str, step: int, t: Optional[float] = None, reason: str = "non-finite values"):
        self.where = where
        self.step = step
        self.t = t
        self.reason = reason
        at = f" (t={t:.6g})" if t is not None else ""
        super().__init__(f"{where}: {reason} at step {step}{at}")


class DegeneracyError(EFAError):
    """A singular system did not have the expected one-dimensional kernel."""


class DomainError(EFAError):
    """A function was evaluated outside its mathematical domain."""


class RangeError(EFAError):
    """A requested window lies outside the stored data."""


class RegressionError(EFAError):
    """Too few usable points for a log-log regression."""


class UpscalingError(EFAError):
    """Internal failure of the upscaling path (window coverage, flux assembly)."""
