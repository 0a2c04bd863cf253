"""Exception hierarchy shared by the simulator modules and the CLI."""

from typing import List, Optional, Tuple


class AfcError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigurationError(AfcError):
    """Bundled data or environment configuration is missing or malformed."""


class DomainError(AfcError):
    """A numerical pre-condition does not hold for the given inputs."""


class ResizeError(DomainError):
    """Propagated trace wrapped around the transform window."""

    def __init__(self, message: str, edge_fraction: float):
        super().__init__(message)
        self.edge_fraction = edge_fraction


class FitError(AfcError):
    """
    Comb fit did not converge.

    Args:
        message: Human readable reason
        best: Best parameters reached before giving up (CombParams or None)
        residual: Residual RMS of the best parameters
    """

    def __init__(self, message: str, best=None, residual: Optional[float] = None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class NoCombError(FitError):
    """Fit window shows no periodic structure; only a flat background."""

    def __init__(self, message: str, d0: float, best=None, residual: Optional[float] = None):
        super().__init__(message, best=best, residual=residual)
        self.d0 = d0


class InconsistencyError(AfcError):
    """Depth inversion produced a negative background depth."""

    def __init__(self, message: str, raw: Tuple[float, float]):
        super().__init__(message)
        self.raw = raw


class ScenarioError(AfcError):
    """
    Scenario file failed schema validation.

    Args:
        message: Summary line
        diagnostics: One entry per problem, already formatted as
            "<file>:<line>: [section] key: reason"
    """

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])

    def __str__(self) -> str:
        if not self.diagnostics:
            return super().__str__()
        return super().__str__() + "\n" + "\n".join(self.diagnostics)


class StageError(AfcError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
