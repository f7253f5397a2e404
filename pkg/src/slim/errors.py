"""Exception types raised across the toolkit.

Every error that library code raises on purpose derives from ``SlimError``,
so callers (and the CLI) can distinguish data/validation problems from
genuine bugs.
"""

__all__ = [
    "SlimError",
    "EmptyTensor",
    "NonFinite",
    "RankOutOfRange",
    "NonPositiveAlpha",
    "UnsupportedBitwidth",
    "ShapeMismatch",
    "IndivisibleDimension",
    "EmptyStats",
    "NonPositiveSaliency",
    "ConfigInvalid",
    "EmptyInput",
    "IoError",
    "BadMagic",
    "UnsupportedVersion",
    "CorruptHeader",
    "TruncatedData",
    "SchemaViolation",
]


class SlimError(Exception):
    """Base class for all toolkit errors."""


class EmptyTensor(SlimError):
    """An operation received a tensor with zero elements."""


class NonFinite(SlimError):
    """Input contains NaN or infinity."""


class RankOutOfRange(SlimError):
    """Requested decomposition rank is outside [1, min(rows, cols)]."""


class NonPositiveAlpha(SlimError):
    """Quantization scale must be a positive finite number."""


class UnsupportedBitwidth(SlimError):
    """Bit width outside the supported integer range."""


class ShapeMismatch(SlimError):
    """Operands have incompatible dimensions."""


class IndivisibleDimension(SlimError):
    """Dimension is not divisible by the structured-sparsity group size."""


class EmptyStats(SlimError):
    """Calibration statistics contain no channels."""


class NonPositiveSaliency(SlimError):
    """Saliency weights must be strictly positive."""


class ConfigInvalid(SlimError):
    """Configuration values are out of range or mutually inconsistent."""


class EmptyInput(SlimError):
    """No input data was provided."""


class IoError(SlimError):
    """Underlying file operation failed."""


class BadMagic(IoError):
    """File does not start with the container magic bytes."""


class UnsupportedVersion(IoError):
    """Container version is not understood by this reader."""


class CorruptHeader(IoError):
    """Container header is malformed or self-inconsistent."""


class TruncatedData(IoError):
    """Container data section is shorter than the header promises."""


class SchemaViolation(IoError):
    """Container is structurally valid but does not describe the expected artifact."""
