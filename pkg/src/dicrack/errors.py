"""Exception hierarchy."""


class DICError(Exception):
    """Base class for errors raised by dicrack."""


class ImageError(DICError, ValueError):
    """Unreadable, unsupported or malformed image."""


class OutOfBoundsError(DICError, ValueError):
    """A query or warped subset falls outside the valid image region."""


class DegenerateSubsetError(DICError, ValueError):
    """Subset intensities have (numerically) zero variance."""


class FrameFailureError(DICError):
    """No seed of a frame could be correlated."""


class NoPlateauError(DICError):
    """The CTOD probe grid has no region flat enough to define a critical CTOD."""

    def __init__(self, message, ctod=None):
        super().__init__(message)
        self.ctod = ctod


class ScaleError(DICError, ValueError):
    """A physical (mm) quantity was requested but no pixel scale is known."""


class ProbeError(DICError, ValueError):
    """A CTOD probe point falls outside the valid part of the field."""


class ConfigError(DICError, ValueError):
    """Invalid run configuration."""
