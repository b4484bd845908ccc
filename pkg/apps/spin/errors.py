from __future__ import annotations

from typing import Any


class SpinError(Exception):
    pass


class DimensionError(SpinError, ValueError):
    pass


class DegenerateRotationError(SpinError, ValueError):
    pass


class BehindCameraError(SpinError, ValueError):
    pass


class UnderConstrainedError(SpinError, ValueError):
    pass


class DegenerateSamplesError(SpinError, ValueError):
    pass


class FormatError(SpinError, ValueError):
    pass


class UnpairedViolationError(SpinError, ValueError):
    pass


class FitDivergedError(SpinError, RuntimeError):
    """Raised when the objective stops being finite; `state` is the last finite iterate."""

    def __init__(self, message: str, state: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.state = state or {}
