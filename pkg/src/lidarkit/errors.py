"""errors.py

Exception hierarchy shared by the analytic, Monte Carlo and CLI layers.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union


class LidarkitError(Exception):
    """Base class for every error raised by lidarkit."""


class DomainError(LidarkitError, ValueError):
    """An argument lies outside the domain of an operation."""


class SingularPointError(DomainError):
    """An integrand was evaluated exactly on one of its singular points."""


class NoScatterError(LidarkitError):
    """Direction sampling requested at a height where ∫σ dΩ = 0."""


class ConvergenceError(LidarkitError):
    """Adaptive quadrature stopped before meeting its tolerance.

    Attributes:
        estimate: Best value obtained before giving up.
        error: Error estimate attached to *estimate*.
        subdivisions: Number of cell refinements performed.
    """

    def __init__(self, message: str, estimate: float, error: float, subdivisions: int):
        super().__init__(message)
        self.estimate = estimate
        self.error = error
        self.subdivisions = subdivisions


# ------------------------------------------------------------
# Configuration errors
# ------------------------------------------------------------

class ConfigError(LidarkitError):
    """Base class for configuration problems.

    ``problems`` holds ``(field_path, message)`` pairs so that every failure
    found in one pass can be reported together.
    """

    def __init__(self, message: str, problems: Optional[Sequence[Tuple[str, str]]] = None):
        self.problems: List[Tuple[str, str]] = list(problems or [])
        if self.problems:
            details = "\n".join(f"  {path}: {msg}" for path, msg in self.problems)
            message = f"{message}\n{details}"
        super().__init__(message)


class ConfigMissingFileError(ConfigError):
    """A config file, or a file it references, does not exist."""

    def __init__(self, path: Union[Path, str], field: str = "<config>"):
        self.path = Path(path)
        super().__init__(f"file not found: {self.path}", [(field, f"no such file: {self.path}")])


class ConfigSchemaError(ConfigError):
    """The document does not match the configuration schema."""


class ConfigInvariantError(ConfigError):
    """The document is well-formed but violates a physical invariant."""


class ValidityError(LidarkitError):
    """A regime check failed in strict mode.

    Attributes:
        violations: One message per failed check.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations: List[str] = list(violations)
        lines = "\n".join(f"  {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} validity violation(s):\n{lines}")
