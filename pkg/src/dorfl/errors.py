class InvalidInputError(ValueError):
    """Raised when an operation receives malformed or inconsistent data."""


class ConfigurationError(ValueError):
    """Raised when hyperparameters make a subproblem ill-posed."""


class DataFormatError(ValueError):
    """Raised when an input file does not follow the expected layout."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
