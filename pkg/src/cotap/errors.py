"""Exception types shared across the library."""


class CotapError(Exception):
    """Base class for all library errors."""


class NotPositiveDefinite(CotapError):
    """Matrix failed the SPD admission test (eigenvalue at or below the floor)."""


class DimensionMismatch(CotapError):
    """Operands disagree in shape or unit tag."""


class ZeroMatrix(CotapError):
    """Operation undefined for an all-zero matrix."""


class RankDeficient(CotapError):
    """Matrix lost full row rank (condition number hit the infinity sentinel)."""


class UnknownLink(CotapError):
    """Link name not present in the chain."""


class UnknownEndEffector(CotapError):
    """End-effector name not present in the chain."""


class ParseError(CotapError):
    """Model or scenario file could not be interpreted."""


class ValidationError(CotapError):
    """Parsed file violates a structural invariant."""


class LengthMismatch(CotapError):
    """Paired series have different lengths."""


class EmptyWindow(CotapError):
    """Reward window contains no samples."""


class NumericalDivergence(CotapError):
    """Simulation state left the trusted numerical regime."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index
