"""Exception types shared across the package."""


class ScoreCamError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ScoreCamError):
    """Tensor or layer shapes violate an operation's contract."""


class ClassOutOfRange(ScoreCamError, IndexError):
    """Requested class index is not a valid output of the model."""


class LayerOutOfRange(ScoreCamError, IndexError):
    """Requested layer index does not exist in the model graph."""


class NotAConvLayer(ScoreCamError):
    """The targeted layer is not a convolution, so it has no activation maps."""


class IndexOutOfRange(ScoreCamError, IndexError):
    """Flat element index falls outside the input tensor."""


class FormatError(ScoreCamError):
    """Base class for on-disk format problems."""


class MagicMismatch(FormatError):
    """File does not start with the expected magic bytes."""


class VersionUnsupported(FormatError):
    """File declares a format version this build cannot read."""


class TruncatedFile(FormatError):
    """File ended before the declared payload was complete."""


class UnsupportedFormat(FormatError):
    """File content is recognized but not decodable by this package."""


class ParseError(FormatError):
    """A text input (manifest) could not be parsed; message names the line."""


class NonpositiveScore(ScoreCamError):
    """A reference score that must be positive was zero or negative."""


class EmptyDataset(ScoreCamError):
    """An evaluation was asked to aggregate over zero images."""


class NoEligibleImages(ScoreCamError):
    """Every image in the dataset was filtered out before evaluation."""


class DegenerateMap(ScoreCamError):
    """An all-zero saliency map makes the requested ratio undefined."""
