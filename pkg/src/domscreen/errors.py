"""Exception types shared across the package."""


class DomscreenError(Exception):
    """Base class for every error raised by domscreen."""


class ValidationError(DomscreenError, ValueError):
    """Input data violates a documented range or shape rule."""


class ConfigurationError(DomscreenError, ValueError):
    """A caller asked for something that is not configured (unknown kind, bad grid...)."""


class ModelFormatError(DomscreenError):
    """A saved model file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ProviderError(DomscreenError):
    """Enrichment provider failure.

    ``retryable`` is True for transport problems (timeouts, HTTP errors) and
    False for payloads that will never parse no matter how often we ask.
    """

    def __init__(self, provider: str, message: str, retryable: bool):
        self.provider = provider
        self.retryable = retryable
        super().__init__(f"[{provider}] {message}")
