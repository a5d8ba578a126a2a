"""Exception hierarchy shared by all splitsim modules."""


class SplitSimError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SplitSimError):
    """Array shapes are incompatible with the requested operation."""


class NumericError(SplitSimError):
    """A computation produced or received NaN/Inf values."""


class InputError(SplitSimError):
    """Argument values violate an operation's preconditions."""


class FormatError(SplitSimError):
    """A binary or text file does not match its expected format."""


class ConfigError(SplitSimError):
    """An experiment configuration is invalid.

    ``field`` names the offending entry as a dotted path when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
