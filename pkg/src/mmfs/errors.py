"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition (shape, range, enum)."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input (zero-norm vector, empty direction)."""


class UnavailableStateError(RuntimeError):
    """An operation was called before the state it needs exists
    (e.g. sampling from an untrained prior, or gradients disabled)."""


class NumericalHealthError(RuntimeError):
    """A numerical routine detected results outside its safe tolerance."""


class CheckpointFormatError(RuntimeError):
    """A checkpoint bundle is structurally invalid (missing/mis-shaped tensor)."""


class CheckpointCorruptionError(CheckpointFormatError):
    """A tensor blob does not match its recorded checksum."""

    def __init__(self, tensor_name, message=None):
        self.tensor_name = tensor_name
        super().__init__(message or f"checksum mismatch for tensor '{tensor_name}'")


class CheckpointVersionError(CheckpointFormatError):
    """The bundle was written with an unsupported format version."""
