from dataclasses import dataclass
from typing import Optional, Sequence


class UwqkdError(Exception):
    """Base class for all package errors."""

    pass


class DomainError(UwqkdError, ValueError):
    """Argument outside the validity domain of a formula."""

    pass


class NumericError(UwqkdError, ArithmeticError):
    """A numeric evaluation failed to reach its accuracy target."""

    pass


class QuadratureError(NumericError):
    """Adaptive quadrature stopped before meeting its tolerance."""

    def __init__(self, message: str, estimate: float, error_bound: float):
        super().__init__(
            f"{message} (estimate={estimate!r}, error bound={error_bound!r})"
        )
        self.estimate = estimate
        self.error_bound = error_bound


class SeriesConvergenceError(NumericError):
    """A truncated series did not converge before its hard cap."""

    def __init__(self, message: str, last_ratio: float):
        super().__init__(
            f"{message} (last term / running sum = {last_ratio:.3e}); "
            "use the quadrature method for this operating point"
        )
        self.last_ratio = last_ratio


class EnumerationBudgetError(UwqkdError):
    """An exhaustive analytic evaluation was refused as too large."""

    pass


class UnsupportedConfigurationError(UwqkdError):
    """The requested evaluation path does not cover this configuration."""

    pass


class ImproperlyConfigured(UwqkdError):
    """The package settings are missing or malformed."""

    pass


@dataclass(frozen=True)
class ConfigViolation:
    location: str
    message: str
    line: Optional[int] = None

    def __str__(self):
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{where}{self.location}: {self.message}"


class ConfigError(UwqkdError):
    """An experiment configuration failed validation."""

    def __init__(self, violations: Sequence[ConfigViolation], source: str = ""):
        self.violations = list(violations)
        self.source = source
        header = f"{source}: " if source else ""
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(
            f"{header}{len(self.violations)} configuration violation(s)\n{lines}"
        )
