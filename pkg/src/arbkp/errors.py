"""Exception types raised across the package."""


class ArbkpError(Exception):
    """Base class for all package errors."""


class SchemaError(ArbkpError):
    """An annotation file does not follow the expected column layout."""


class DuplicateError(ArbkpError):
    """An image id occurs more than once."""


class MaskFormatError(ArbkpError):
    """A mask raster is not a valid single-channel label image."""


class SplitError(ArbkpError):
    """A dataset split cannot be formed."""


class PredictionParseError(ArbkpError):
    """A prediction or query row is malformed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BoundsError(ArbkpError):
    """A point lies outside the raster."""


class GeometryUnavailable(ArbkpError):
    """The enclosing geometry of a body part cannot be built."""


class GenerationFailed(ArbkpError):
    """A keypoint cannot be generated for an otherwise valid part."""


class EncodeError(ArbkpError):
    pass


class DecodeError(ArbkpError):
    pass


class ConfigError(ArbkpError):
    """Invalid embedder configuration."""


class ShapeError(ArbkpError):
    """Input dimensions do not match the embedder configuration."""
