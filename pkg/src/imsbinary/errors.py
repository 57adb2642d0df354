"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class ParseError(ValueError):
    """Malformed input file. Carries the offending 1-based line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class ValidationError(ValueError):
    """Input parsed fine but is inconsistent with another input."""


class RangeError(ValueError):
    """A value lies outside the declared acquisition range."""


class DegenerateSubsetError(ValueError):
    """No bin characterizes the chosen subset (no positive DIPPS value)."""


class SchemaVersionError(ValueError):
    """A serialized intermediate does not match the expected schema."""
