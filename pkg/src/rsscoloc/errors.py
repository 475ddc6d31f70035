"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Inconsistent or malformed configuration (spec files, priors, dimensions)."""


class DomainError(ValueError):
    """A numeric argument lies outside the domain of the operation."""


class FormatError(ValueError):
    """A text file does not follow the expected record layout."""


class EngineError(RuntimeError):
    """Failure inside the message-passing engine, with iteration/agent context."""
