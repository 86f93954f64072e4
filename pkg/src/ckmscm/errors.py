"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file or record does not match its declared layout."""

    def __init__(self, message, offset=None, line=None):
        self.offset = offset
        self.line = line
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NoCoverageError(ValueError):
    """A gain map holds no pixel above the building/no-coverage sentinel."""


class NumericalFault(FloatingPointError):
    """A non-finite value appeared in a parameter or gradient."""

    def __init__(self, message, name=None):
        self.name = name
        super().__init__(message if name is None else f"{message}: {name}")
