"""Exception types raised across the package."""


class GlaiError(Exception):
    """Base class for every error raised by glai."""


class ConfigurationError(GlaiError, ValueError):
    """Invalid network spec, config file or CLI option."""


class ShapeError(GlaiError, ValueError):
    """Array dimensions disagree with the network they are used with."""


class InputError(GlaiError, ValueError):
    """Bad argument value: label out of range, misaligned patterns, empty data..."""


class CapacityError(GlaiError):
    """Path enumeration would exceed the configured cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"architecture has {count} paths, exceeding the cap of {cap}")
        self.count = count
        self.cap = cap


class RankDeficiencyError(GlaiError, ArithmeticError):
    """Least-squares system is singular and no ridge term was given."""


class FormatError(GlaiError, ValueError):
    """Malformed input file. ``location`` is a line number or byte offset."""

    def __init__(self, message: str, location: int | None = None, unit: str = "line"):
        if location is not None:
            message = f"{unit} {location}: {message}"
        super().__init__(message)
        self.location = location


class VersionError(FormatError):
    """File carries a format version this build does not read."""


class DivergenceError(GlaiError, FloatingPointError):
    """An update produced NaN or Inf parameters (learning rate too large?)."""
