"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1,
data/format errors exit 2, numerical failures exit 3.
"""


class VgsrError(Exception):
    """Base class for every error raised by this package."""


class UsageError(VgsrError):
    """The caller asked for something the given inputs cannot support."""


class DataFormatError(VgsrError):
    """A file or record does not match its declared format."""


class CorruptionError(DataFormatError):
    """A binary artifact is truncated or internally inconsistent."""


class DimensionError(DataFormatError):
    """Array shapes disagree with an operation's contract."""


class NumericalError(VgsrError):
    """A computation produced NaN/Inf or otherwise lost numerical validity."""
