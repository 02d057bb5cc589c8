"""Exception types shared across the package."""


class TqsError(Exception):
    """Base class for all package errors."""


class InvalidSizeError(TqsError, ValueError):
    """System size outside the supported range."""


class ShapeError(TqsError, ValueError):
    """Array or configuration length does not match the declared system size."""


class ConfigError(TqsError, ValueError):
    """Invalid run configuration (missing, unknown, or malformed keys)."""


class ContextOverflowError(TqsError, ValueError):
    """Requested position exceeds the precomputed positional-encoding table."""


class NumericFailureError(TqsError, RuntimeError):
    """Non-finite value encountered in model evaluation or optimization."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


class DegenerateSampleError(TqsError, RuntimeError):
    """Wave-function amplitude at a sampled configuration is below the underflow floor."""


class BatchRejectedError(TqsError, RuntimeError):
    """Every sample in a batch was degenerate; the iteration must be retried."""


class SizeLimitError(TqsError, ValueError):
    """Exact diagonalization requested beyond the supported system size."""


class UnsupportedSizeError(TqsError, ValueError):
    """Operation only defined for even system sizes."""


class UndefinedCumulantError(TqsError, ValueError):
    """Binder cumulant undefined because the second moment vanishes."""


class NoCrossingError(TqsError, ValueError):
    """No pair of Binder-cumulant curves crosses on the scanned grid."""


class MeasurementFormatError(TqsError, ValueError):
    """Malformed measurement file; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line
