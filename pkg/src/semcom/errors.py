"""Exception types shared across the package."""


class SemcomError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(SemcomError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(SemcomError, ValueError):
    """Input is structurally valid but degenerate (e.g. an all-zero block)."""


class FormatError(SemcomError, ValueError):
    """A serialized container is malformed (bad magic, bad header fields)."""


class DecodeError(SemcomError, RuntimeError):
    """A container body failed to decode.

    ``partial`` is True when the body ended early (truncation or
    post-channel corruption), as opposed to an internally inconsistent
    symbol stream.
    """

    def __init__(self, message: str, partial: bool = False):
        super().__init__(message)
        self.partial = partial


class ConstructionError(SemcomError, RuntimeError):
    """A code or model could not be constructed from the given parameters."""


class TrainingError(SemcomError, RuntimeError):
    """Training diverged. ``epoch`` is the epoch index where loss became non-finite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class RegistrationError(SemcomError, RuntimeError):
    """View registration could not find a feasible alignment."""


class PrivacyError(SemcomError, ValueError):
    """A privacy-flagged knowledge entry reached a surface it must not cross."""


class ConfigError(SemcomError, ValueError):
    """An experiment configuration is inconsistent or infeasible."""
