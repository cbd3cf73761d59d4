"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`VsdError`,
and each subclass carries the CLI exit code it maps to.
"""


class VsdError(Exception):
    exit_code = 3


class InvalidArgumentError(VsdError, ValueError):
    exit_code = 2


class ConfigError(VsdError):
    exit_code = 2


class FormatError(VsdError):
    """A file does not follow its documented format."""

    def __init__(self, message, *, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ParseError(FormatError):
    pass


class MissingFeatureError(VsdError, LookupError):
    pass


class IncompleteInputError(VsdError):
    pass


class ShortageError(VsdError):
    """Not enough samples of one label to satisfy a sampling request."""

    def __init__(self, label, available, requested):
        super().__init__(
            f"not enough {label} samples: {available} available, {requested} requested"
        )
        self.label = label
        self.available = available
        self.requested = requested


class DegenerateDataError(VsdError):
    exit_code = 4


class DegenerateFitError(DegenerateDataError):
    pass


class UndefinedMetricError(VsdError, ValueError):
    pass
