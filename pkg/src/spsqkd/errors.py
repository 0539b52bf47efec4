"""Exception types shared across the package."""


class SpsqkdError(Exception):
    """Base class for all package errors."""


class ConfigError(SpsqkdError, ValueError):
    """Invalid configuration or dataset schema."""


class EstimationError(SpsqkdError, RuntimeError):
    """A fit failed to converge or the data cannot identify the model.

    ``diagnostics`` carries whatever per-peak / per-iteration information
    the estimator had when it gave up.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoDetectionError(SpsqkdError, ValueError):
    """Detection probability is zero, so no key can be distilled."""
