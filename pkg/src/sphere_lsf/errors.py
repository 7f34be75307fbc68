"""Exception hierarchy shared by every module."""

from __future__ import annotations


class SphereLSFError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(SphereLSFError, ValueError):
    """A parameter lies outside the region where the construction is defined."""


class TooSmallError(DomainError):
    """A derived filter count is below 16, where ln ln m is not positive."""


class DimensionError(SphereLSFError, ValueError):
    """Vector dimension does not match the structure it is used with."""


class RangeError(SphereLSFError, ValueError):
    """A vector lies outside the ball an embedding accepts."""


class AllocationError(SphereLSFError, MemoryError):
    """A requested filter bank exceeds the configured memory budget."""


class AuditFailure(SphereLSFError, AssertionError):
    """Numerical privacy audit found an event violating the (eps, delta) bound."""


class VerificationFailure(SphereLSFError, AssertionError):
    """Embedding distortion exceeded its calibrated failure threshold."""

    def __init__(self, message: str, failures: dict[str, int] | None = None) -> None:
        super().__init__(message)
        self.failures = dict(failures or {})


class FormatError(SphereLSFError, ValueError):
    """Malformed binary file; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NormError(SphereLSFError, ValueError):
    """Vectors that should lie on the unit sphere do not."""

    def __init__(self, ids: list[int], tol: float) -> None:
        shown = ", ".join(str(i) for i in ids[:10])
        more = "" if len(ids) <= 10 else f" (+{len(ids) - 10} more)"
        super().__init__(f"vectors not unit-norm within {tol:g}: ids {shown}{more}")
        self.ids = list(ids)
