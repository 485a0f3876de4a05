"""Exception hierarchy shared by all modules."""


class IDSpritesError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(IDSpritesError, ValueError):
    """Invalid configuration values."""


class DegenerateShapeError(IDSpritesError, ValueError):
    """Outline with too few vertices or (near) zero enclosed area."""


class FrameViolationError(IDSpritesError, ValueError):
    """Placed outline leaves the [-1, 1]^2 image frame."""


class EstimationError(IDSpritesError, ValueError):
    """The analytic pose estimator cannot recover a pose from the image."""


class InsufficientMassError(EstimationError):
    pass


class AmbiguousOrientationError(EstimationError):
    pass


class ExemplarBufferError(IDSpritesError, KeyError):
    """Invalid exemplar buffer edit or lookup."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DuplicateClassError(ExemplarBufferError):
    pass


class MissingClassError(ExemplarBufferError):
    pass


class EmptyBufferError(ExemplarBufferError):
    pass


class FormatError(IDSpritesError):
    """Malformed binary file (dataset or checkpoint)."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass
