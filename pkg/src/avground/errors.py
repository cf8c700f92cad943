"""Exception types shared across the package."""


class AVGroundError(Exception):
    """Base class for all package errors."""

    code = "error"


class InputError(AVGroundError):
    """Rejected input: wrong shape, empty sequence, invalid values."""

    code = "input"


class ConfigError(AVGroundError):
    """Invalid configuration value."""

    code = "config"


class DegenerateParameterError(AVGroundError):
    """A learned parameter reached a value the operation cannot use (e.g. w = 0)."""

    code = "degenerate"


class ProviderError(AVGroundError):
    """A captioning/LLM provider failed permanently (retries exhausted)."""

    code = "provider"


class ProviderTimeout(ProviderError):
    """A single provider call timed out; retryable."""

    code = "provider_timeout"


class TrainingAbort(AVGroundError):
    """Training stopped on a non-finite loss; diagnostics were dumped."""

    code = "training_abort"
