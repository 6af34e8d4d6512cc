"""Exception types shared across the package."""


class TallyoptError(Exception):
    """Base class for all package errors."""


class DomainError(TallyoptError, ValueError):
    """An input lies outside the domain of a function or design space."""


class ConfigError(TallyoptError, ValueError):
    """Invalid configuration value (uncertainty level, split size, config file)."""


class ParseError(TallyoptError, ValueError):
    """A persisted artifact could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingError(TallyoptError, RuntimeError):
    """Surrogate training diverged."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class OptimizationError(TallyoptError, RuntimeError):
    """The objective function returned unusable values during a run."""


class ArtifactError(TallyoptError, RuntimeError):
    """A pipeline stage is missing upstream artifacts or they are stale."""
