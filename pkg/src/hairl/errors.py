"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes do not conform."""


class NumericError(ArithmeticError):
    """A loss or gradient became non-finite."""


class SizeError(ValueError):
    """An enumeration would exceed the configured table cap."""


class SchemaError(ValueError):
    """A demonstration file or config is structurally inconsistent."""


class DemoParseError(ValueError):
    """A demonstration file line could not be parsed."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno
