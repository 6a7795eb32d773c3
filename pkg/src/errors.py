"""
Exception hierarchy shared by the library modules and the CLI.

Each CLI-visible failure class maps to its own exit code so scripts driving
experiments can tell a bad config from an instance that is too large.
"""

from typing import Any, Dict, Optional


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIZE_LIMIT = 3
EXIT_PARSE = 4
EXIT_VIOLATION = 5


class TSPExperimentError(Exception):
    """Base class for every error raised by this package."""

    exit_code = EXIT_CONFIG


class SpaceConfigError(TSPExperimentError, ValueError):
    """A SpaceSpec parameter violates one of its invariants."""


class DimensionMismatchError(TSPExperimentError, ValueError):
    """Points and space disagree on the ambient dimension."""


class SizeLimitError(TSPExperimentError, ValueError):
    """Instance size outside the range a solver accepts."""

    exit_code = EXIT_SIZE_LIMIT

    def __init__(self, what: str, n: int, lower: int, upper: Optional[int] = None):
        self.what = what
        self.n = n
        self.lower = lower
        self.upper = upper
        if upper is None:
            bound = f"n >= {lower}"
        else:
            bound = f"{lower} <= n <= {upper}"
        super().__init__(f"{what} requires {bound}, got n = {n}")


class PointsParseError(TSPExperimentError, ValueError):
    """A point-set file could not be parsed."""

    exit_code = EXIT_PARSE


class DegenerateRegressionError(TSPExperimentError, ValueError):
    """A log-log regression had nothing usable to fit."""

    def __init__(self, message: str, diagnostic: Optional[Dict[str, Any]] = None):
        self.diagnostic = diagnostic or {}
        super().__init__(f"{message} (diagnostic: {self.diagnostic})")


class EmptyTraceError(TSPExperimentError, ValueError):
    pass


class RadiusExceedsDiameterError(TSPExperimentError, ValueError):
    pass


class FamilyMismatchError(TSPExperimentError, ValueError):
    pass


class InsufficientDataError(TSPExperimentError, ValueError):
    pass


class ConfigError(TSPExperimentError, ValueError):
    """Experiment configuration failed validation."""


class HeuristicInvariantError(TSPExperimentError, RuntimeError):
    """A heuristic broke its own structural contract; reported, never repaired."""

    exit_code = EXIT_VIOLATION
