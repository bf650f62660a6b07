"""Exception hierarchy shared across the package."""


class DcerError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(DcerError):
    """Shapes are incompatible for the requested operation."""


class ContractError(DcerError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class InputError(DcerError):
    """Invalid user-supplied data (out-of-vocabulary token, too-short signal)."""


class DivergenceError(DcerError):
    """Numeric divergence during iterative optimization.

    Carries the step index at which a non-finite value first appeared.
    """

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class FormatError(DcerError):
    """Malformed or truncated tensor container file."""


class CheckpointMismatchError(DcerError):
    """Checkpoint parameter names do not match the current architecture."""

    def __init__(self, missing, extra):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(
            f"checkpoint incompatible: missing={self.missing} extra={self.extra}"
        )


class ConfigError(DcerError):
    """Invalid configuration value."""
