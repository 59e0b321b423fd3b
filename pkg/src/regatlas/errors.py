"""Shared exception types."""


class RegatlasError(Exception):
    """Base class for all library errors."""


class JetError(RegatlasError):
    """Incompatible or degenerate jet operation (order/base mismatch, zero pivot)."""


class DomainError(RegatlasError):
    """Point or region outside a map's domain, or orbit overflow."""


class FoldError(RegatlasError):
    """Graph transform projection is not monotone; carries the fold location."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class DegenerateDirectionError(RegatlasError):
    """A propagated tangent direction collapsed numerically."""


class StitchError(RegatlasError):
    """Overlapping manifold pieces disagree beyond tolerance."""


class PremiseViolation(RegatlasError):
    """A quantitative hypothesis failed.  `report` holds the margins.

    Raised by operations whose contract requires certified premises; callers
    that want to proceed anyway catch it and record `report`.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report if report is not None else {}
