"""Exception hierarchy.

Every error raised by the library derives from :class:`DiastereoError`.
The two intermediate classes carry the CLI exit code: data problems exit
with 2, numerical failures with 3.
"""

from __future__ import annotations


class DiastereoError(Exception):
    exit_code = 2

    def to_json(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class DataError(DiastereoError):
    """Bad or missing input data."""

    exit_code = 2


class NumericalError(DiastereoError):
    """A solver or geometric construction failed."""

    exit_code = 3


# raster I/O
class UnknownMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class HeaderFieldMissing(DataError):
    pass


class RangeError(DataError):
    pass


class IoError(DataError):
    pass


class SingularHomography(NumericalError):
    pass


# rpc
class DenominatorNearZero(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class MissingCoefficient(DataError):
    def __init__(self, name: str):
        super().__init__(f"missing RPC coefficient {name!r}")
        self.name = name


class MalformedNumber(DataError):
    pass


# homography
class PointAtInfinity(NumericalError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


# sparse matching
class MalformedLine(DataError):
    def __init__(self, lineno: int, line: str = ""):
        super().__init__(f"malformed match line {lineno}: {line!r}")
        self.lineno = lineno


class EmptyFile(DataError):
    pass


class ImageTooSmall(DataError):
    pass


# rectification
class DegenerateGeometry(NumericalError):
    pass


class EmptyMatchSet(DataError):
    pass


class MatchFailure(NumericalError):
    pass


# ground truth
class NoGeotransform(DataError):
    pass


class EmptyOverlap(DataError):
    pass


# dense matching
class BadDisparityRange(DataError):
    pass


class BipolarDisparityError(DataError):
    pass


# triangulation
class OutOfBounds(NumericalError):
    def __init__(self, h: float, residual: float):
        super().__init__(f"height search pinned at bound h={h:.3f} (residual {residual:.3g} px)")
        self.h = h
        self.residual = residual


class EmptyInput(DataError):
    pass


# evaluation
class GridMismatch(DataError):
    pass


class NoEvaluablePixels(DataError):
    pass


class EmptyGroup(DataError):
    pass


class FrameMismatch(DataError):
    pass


class InsufficientPairs(UserWarning):
    """Emitted when an AOI cannot fill its quota for a label."""


class DomainWarning(UserWarning):
    """Normalized RPC coordinates outside the fitted domain."""
