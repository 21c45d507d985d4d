"""
Domain errors
Every failure carries a stable code and a machine-readable record
"""
from typing import Any, Dict


class SingleViewError(Exception):
    """
    Base class for all pipeline failures.

    The record shape mirrors the detail dicts the HTTP layer returns:
    {"error": <code>, "message": <text>, **context}
    """

    def __init__(self, message: str = "", **context: Any):
        super().__init__(message)
        self.message = message or self.__class__.__name__
        self.context: Dict[str, Any] = dict(context)

    @property
    def code(self) -> str:
        return self.__class__.__name__

    def with_context(self, **context: Any) -> "SingleViewError":
        """Attach extra context (frame index, camera id) and return self for re-raising"""
        for key, value in context.items():
            self.context.setdefault(key, value)
        return self

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"error": self.code, "message": self.message}
        record.update(self.context)
        return record

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.message} ({details})"


class InvalidParameter(SingleViewError, ValueError):
    """A parameter is outside its documented range"""


class InvalidConfig(SingleViewError):
    """A configuration file failed validation"""


# geometry
class GeometryError(SingleViewError):
    pass


class TooFewPoints(GeometryError):
    pass


class DegenerateConfiguration(GeometryError):
    pass


class NoModelFound(GeometryError):
    pass


class PointAtInfinity(GeometryError):
    pass


# features
class ImageTooSmall(SingleViewError):
    pass


class EmptySet(SingleViewError):
    pass


# alignment
class InsufficientCorrespondences(SingleViewError):
    pass


# movement detection
class WindowTooLarge(SingleViewError):
    pass


# rehoming / selection
class AllZeroAreas(SingleViewError):
    pass


class NoRehomingFound(SingleViewError):
    pass


# metrics
class DimensionMismatch(SingleViewError):
    pass


class TooFewFrames(SingleViewError):
    pass


class NoTrackablePoints(SingleViewError):
    pass


# simulator / pipeline
class InvalidScenario(SingleViewError):
    pass


class InputMismatch(SingleViewError):
    pass
