"""
Exception hierarchy shared by services, routes and the CLI.
"""

from typing import Any, Dict, Optional


class OrbitMateError(Exception):
    """Base class for every error raised by the toolkit"""

    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, "details": self.details}


class ConfigError(OrbitMateError):
    """Scenario file unreadable or schema-invalid"""

    exit_code = 2


class ManifoldError(OrbitMateError):
    """State is off the constraint manifold or the gradient degenerates"""


class ProjectionError(OrbitMateError):
    """Newton projection onto s = 0 did not converge"""


class ChartError(OrbitMateError):
    """Chart used too far from its anchor"""


class ChartExitError(ChartError):
    """Trajectory of the stroboscopic map left the chart validity region"""


class EventLocalizationError(OrbitMateError):
    """Event bisection underflowed before reaching tolerance"""


class SweepExhaustedError(OrbitMateError):
    """Energy cap sweep reached its upper end without certification"""


class EmptyTangencySetError(OrbitMateError):
    """The moving plane misses the surface"""


class StructureMismatchError(OrbitMateError):
    """Sampled egress set does not match its analytic description"""


class WitnessNotFoundError(OrbitMateError):
    """No internal tangency witness below the speed cap"""


class ConvergenceError(OrbitMateError):
    """Newton shooting did not converge"""
