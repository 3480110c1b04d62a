"""Exception taxonomy shared across the toolkit.

Each error category maps to a distinct CLI exit code (see cli.py).
"""


class PathsensError(Exception):
    """Base class for all toolkit errors."""


class ModelContractError(PathsensError):
    """A model callable violated its declared shape or sign contract."""


class DivergenceError(PathsensError):
    """An SDE path left the finite range; carries the offending step index."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class ExplosionError(PathsensError):
    """A jump path exceeded the configured jump cap."""


class ScoreUndefinedError(PathsensError):
    """Likelihood-ratio score requested where the propensity vanishes."""


class TruncationError(PathsensError):
    """State-space truncation too small: boundary probability mass above tolerance."""


class SolverError(PathsensError):
    """A deterministic solver failed (singular linear system)."""


class ConfigError(PathsensError):
    """Experiment configuration failed validation."""


class UnknownIdError(PathsensError):
    """Unknown model or estimator identifier."""


class ReportIOError(PathsensError):
    """Report could not be written or read."""
