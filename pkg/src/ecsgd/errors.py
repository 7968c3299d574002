"""Exception hierarchy."""


class EcsgdError(Exception):
    """Base class for all errors raised by this package."""


class InvalidVector(EcsgdError, ValueError):
    pass


class DimensionMismatch(EcsgdError, ValueError):
    def __init__(self, expected, got, what="vector"):
        super().__init__(f"{what}: expected dimension {expected}, got {got}")
        self.expected = expected
        self.got = got


class CompressionError(EcsgdError, ValueError):
    pass


class ConfigError(EcsgdError, ValueError):
    """Invalid experiment configuration.

    ``path`` is the dotted field path (e.g. ``experiments[1].iterations``)
    and ``line`` the 1-based source line when parsed from text.
    """

    def __init__(self, message, path=None, line=None):
        self.message = message
        self.path = path
        self.line = line
        where = ""
        if path:
            where += f"{path}: "
        if line is not None:
            where = f"line {line}: " + where
        super().__init__(where + message)


class IncompleteTrajectory(EcsgdError, ValueError):
    pass
