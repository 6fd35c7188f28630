"""Exception types shared across the package."""


class InnMorphError(Exception):
    """Base class for all package errors."""


class ShapeError(InnMorphError, ValueError):
    """An array has the wrong length or shape for the operation."""


class StaleCacheError(InnMorphError, RuntimeError):
    """A backward pass was handed a cache from a different model or parameter state."""


class NonFiniteError(InnMorphError, FloatingPointError):
    """A loss or gradient became NaN/Inf."""


class DataFormatError(InnMorphError, ValueError):
    """Malformed dataset or embedding file; ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class VocabularyError(InnMorphError, KeyError):
    """A word cannot be resolved to a vector."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class CheckpointError(InnMorphError, OSError):
    """Checkpoint file is unreadable, truncated or incompatible."""


class TrainingError(InnMorphError, RuntimeError):
    """Training aborted (non-finite loss and the like)."""
