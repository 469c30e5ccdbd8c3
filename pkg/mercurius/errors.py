"""
Exception types raised by the mercurius pipeline.

Expected analysis outcomes (ill-formed choices, unproven guards, simulator
error verdicts) are returned as data. Exceptions are for malformed input
and broken invariants.
"""

from typing import Optional


class MercuriusError(Exception):
    """Base class for every error raised by this package."""


class DslSyntaxError(MercuriusError):
    """Protocol text could not be parsed."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, col {col})")
        self.line = line
        self.col = col


class ArityMismatch(MercuriusError):
    pass


class DuplicateLabel(MercuriusError):
    pass


class DuplicateParty(MercuriusError):
    """A transmission names the same party as sender and receiver."""


class UnknownLabel(MercuriusError):
    pass


class UnknownParty(MercuriusError):
    pass


class UnknownDefinition(MercuriusError):
    pass


class UnexpandedInvoke(MercuriusError):
    """An operation that needs an Invoke-free protocol met an Invoke node."""


class UnboundedRecursion(MercuriusError):
    pass


class InconsistentStore(MercuriusError):
    """The ordering store derives a happens-before cycle."""

    def __init__(self, message: str, cycle: Optional[list] = None):
        super().__init__(message)
        self.cycle = cycle or []


class SoundnessViolation(MercuriusError):
    """Static analysis said race-free but the simulator found a race or a protocol error."""
