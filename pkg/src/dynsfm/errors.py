"""Exception taxonomy shared across the package.

Every error raised by library code derives from :class:`DynsfmError` so
callers (and the CLI) can distinguish "your input is bad" from genuine bugs.
"""

from __future__ import annotations


class DynsfmError(Exception):
    """Base class for all package errors."""


class InvalidInput(DynsfmError, ValueError):
    """An argument violates a documented precondition."""


class MissingSignal(InvalidInput):
    """A filter score was requested for a signal that was never measured."""

    def __init__(self, component: str, field: str):
        self.component = component
        self.field = field
        super().__init__(f"component '{component}' requires signal '{field}' which is absent")


class SeriesTooShort(InvalidInput):
    """A signal series is shorter than the minimum its statistic needs."""


class NoPositives(InvalidInput):
    """A precision/recall sweep was requested with zero positive labels."""


class TooFewMatches(InvalidInput):
    """Robust estimation received fewer correspondences than the minimal sample."""


class InsufficientPoints(InvalidInput):
    """An alignment needs more overlapping points than were provided."""


class DimensionMismatch(InvalidInput):
    """Array shapes disagree with each other or with declared frame geometry."""


class Degenerate(DynsfmError):
    """A geometric entity is undefined for this input (e.g. zero-translation epipolar geometry)."""


class DegenerateGeometry(DynsfmError):
    """Input geometry leaves the solution ambiguous (e.g. collinear points)."""


class ZeroBaseline(DynsfmError):
    """Two views share a camera center; triangulation is impossible."""


class DivisionDegenerate(DynsfmError, ArithmeticError):
    """A denominator vanished where the quantity is mathematically undefined."""


class NoConsensus(DynsfmError):
    """Robust model fitting could not find an acceptable inlier set."""

    def __init__(self, message: str, best_inlier_count: int = 0):
        self.best_inlier_count = best_inlier_count
        super().__init__(message)


class EmptyGraph(DynsfmError):
    """A view graph ended up with no usable edges."""


class InsufficientParallax(DynsfmError):
    """No edge carries a translation direction, so camera centers are unconstrained."""


class Diverged(DynsfmError):
    """Non-linear refinement failed to decrease the cost across all damping retries."""


class NoPairs(DynsfmError):
    """An evaluation was requested against an empty annotated-pair set."""


class ParseError(DynsfmError):
    """A serialized artifact is malformed. Carries file/line/offset position."""

    def __init__(
        self,
        message: str,
        path: str | None = None,
        line: int | None = None,
        offset: int | None = None,
    ):
        self.path = path
        self.line = line
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        prefix = ": ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
