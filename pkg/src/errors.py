"""
Error taxonomy for the HVS ISP library.

Every error raised on purpose by the library derives from HvsIspError and
carries the name of the stage or operation that failed, so the CLI can
report it without guessing.
"""

from typing import Optional


class HvsIspError(Exception):
    """Base class for all library errors."""

    def __init__(self, message: str = "", stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self) -> str:
        if self.stage:
            return f"{self.stage}: {self.message}"
        return self.message

    def __reduce__(self):
        # keeps the stage when errors cross a process pool
        return self.__class__, (self.message, self.stage)


class ParseError(HvsIspError, ValueError):
    """Malformed file header or document."""


class RangeError(HvsIspError, ValueError):
    """Value outside its permitted range (sample bits, polarity, NaN, bounds)."""


class InvariantError(HvsIspError, ValueError):
    """A domain object violates one of its structural invariants."""


class OrderError(HvsIspError, ValueError):
    """Event timestamps are not sorted."""


class ShapeError(HvsIspError, ValueError):
    """Geometries of inputs do not agree."""


class EmptyInputError(HvsIspError, ValueError):
    """An operation received no input where at least one item is required."""


class AnnotationError(HvsIspError, ValueError):
    """ColorChecker annotation is incomplete or degenerate."""


class IlluminantError(HvsIspError, ValueError):
    """Gray reference patch is over- or under-exposed."""


class FitError(HvsIspError, ValueError):
    """CCM optimisation produced a non-finite objective."""


class ConfigError(HvsIspError, ValueError):
    """Invalid configuration or missing input for a configured stage."""


class PreconditionError(HvsIspError, ValueError):
    """Input is valid but not in the state the operation needs."""


class InsufficientDataError(HvsIspError, ValueError):
    """Not enough data for a statistically meaningful result."""


class IoError(HvsIspError, OSError):
    """Reading or writing a file failed."""
