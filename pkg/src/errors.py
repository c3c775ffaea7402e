"""Exception hierarchy for the identifiability toolkit."""

from typing import Any, Dict


class IdentVaeError(Exception):
    """Base class for every error raised by this package."""

    def details(self) -> Dict[str, Any]:
        """Extra machine-readable fields for the CLI error document."""
        return {}


class ShapeError(IdentVaeError, ValueError):
    """Operand shapes do not conform."""


class ConfigError(IdentVaeError, ValueError):
    """A configuration document or argument is invalid."""


class DegenerateInputError(IdentVaeError, ValueError):
    """Input carries no information for the requested statistic."""


class StaleTapeError(IdentVaeError, RuntimeError):
    """A forward tape was replayed or paired with the wrong gradient."""


class ExperimentError(IdentVaeError, RuntimeError):
    """An experiment could not produce enough surviving runs."""


class SvdConvergenceError(IdentVaeError, ArithmeticError):
    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations

    def details(self) -> Dict[str, Any]:
        return {"iterations": self.iterations}


class RejectionSamplingError(IdentVaeError, RuntimeError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts

    def details(self) -> Dict[str, Any]:
        return {"attempts": self.attempts}


class IdentifiabilityError(IdentVaeError, RuntimeError):
    def __init__(self, message: str, retries: int):
        super().__init__(message)
        self.retries = retries

    def details(self) -> Dict[str, Any]:
        return {"retries": self.retries}


class NonFiniteLossError(IdentVaeError, FloatingPointError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step

    def details(self) -> Dict[str, Any]:
        return {"step": self.step}


class CorruptArtifactError(IdentVaeError, ValueError):
    """A file in an experiment directory is missing required fields."""

    def __init__(self, message: str, path: str):
        super().__init__(message)
        self.path = path

    def details(self) -> Dict[str, Any]:
        return {"path": self.path}
