"""Exception hierarchy shared by every stage of the separation chain."""


class BssError(Exception):
    """Base class for all errors raised by :mod:`fdbss`."""


class ConfigError(BssError, ValueError):
    """Invalid configuration or parameter combination (CLI exit code 2)."""


class DataError(BssError, ValueError):
    """Input data that cannot be processed (CLI exit code 3)."""


class DegenerateBinError(DataError):
    """A frequency bin whose covariance is rank deficient.

    The caller is expected to substitute an identity unmixing matrix.
    """

    def __init__(self, message, bin_index=None):
        super().__init__(message)
        self.bin_index = bin_index


class WavFormatError(DataError):
    """Malformed or unsupported RIFF/WAVE file."""

    def __init__(self, message, chunk=None):
        super().__init__(message)
        self.chunk = chunk
