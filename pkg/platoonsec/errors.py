"""
Exception hierarchy for the platoon security toolkit.

Every exception carries an ``exit_code`` so the command-line front end can map
failures onto the documented process exit codes without a lookup table:

    0  success
    1  unexpected toolkit error
    2  configuration / validation error
    3  model or problem structure error
    4  infeasible synthesis (single program or whole grid)
    5  numerical failure (solver breakdown, non-finite simulation state)
    6  artifact / config mismatch
"""

from typing import Dict, Optional


class ToolkitError(Exception):
    """Base class for all errors raised by platoonsec."""

    exit_code = 1


class ConfigError(ToolkitError):
    """A configuration value is missing, malformed or violates an invariant."""

    exit_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class ModelStructureError(ToolkitError):
    """A structural identity of the discretized model does not hold."""

    exit_code = 3


class ProblemDefinitionError(ToolkitError):
    """An SDP references undeclared variables or has inconsistent shapes."""

    exit_code = 3


class SynthesisError(ToolkitError):
    """A synthesis program is infeasible or its solution fails a post-check."""

    exit_code = 4

    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class InfeasibleGridError(SynthesisError):
    """Every point of a scalar grid search came back without an optimal solution."""

    def __init__(self, name: str, statuses: Dict[float, str]):
        self.statuses = dict(statuses)
        counts: Dict[str, int] = {}
        for status in self.statuses.values():
            counts[status] = counts.get(status, 0) + 1
        summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
        super().__init__(
            f"{name}: no grid point produced an optimal solution ({summary})",
            diagnostics={"statuses": self.statuses},
        )


class ProjectionError(ToolkitError):
    """Ellipsoid projection is undefined (singular block or bad coordinates)."""

    exit_code = 4


class NumericalFailure(ToolkitError):
    """The numerical backend broke down and the caller cannot recover."""

    exit_code = 5


class NonFiniteStateError(NumericalFailure):
    """A simulated or streamed quantity became NaN or infinite."""

    def __init__(self, message: str, run: Optional[int] = None,
                 k: Optional[int] = None, vehicle: Optional[int] = None):
        self.run = run
        self.k = k
        self.vehicle = vehicle
        where = ", ".join(
            f"{name}={value}" for name, value in
            (("run", run), ("k", k), ("vehicle", vehicle)) if value is not None
        )
        super().__init__(f"{message} ({where})" if where else message)


class ArtifactMismatchError(ToolkitError):
    """Stored synthesis artifacts do not belong to the supplied configuration."""

    exit_code = 6
