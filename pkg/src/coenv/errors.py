"""Exception types raised across the engine."""

from __future__ import annotations

from typing import Any, Optional


class CoEnvError(Exception):
    """Base class for all engine errors."""


class DimensionMismatch(CoEnvError, ValueError):
    pass


class EmptyInput(CoEnvError, ValueError):
    pass


class DegenerateSpectrum(CoEnvError, ValueError):
    """Top two eigenvalues of the quaternion scatter matrix coincide."""


class DegenerateGeometry(CoEnvError, ValueError):
    pass


class TooFewPoints(CoEnvError, ValueError):
    pass


class MissingExtrinsic(CoEnvError, KeyError):
    def __init__(self, camera_id: str):
        super().__init__(camera_id)
        self.camera_id = camera_id

    def __str__(self) -> str:
        return f"no extrinsic for camera {self.camera_id!r}"


class MixedObjects(CoEnvError, ValueError):
    pass


class UnknownObject(CoEnvError, KeyError):
    pass


class ReachLimit(CoEnvError):
    """IK could not reach the target; carries the closest configuration found."""

    def __init__(self, closest_q: Any, residual_gap: float, rotation_gap: float = 0.0,
                 target: Any = None, actual: Any = None):
        self.closest_q = closest_q
        self.residual_gap = float(residual_gap)
        self.rotation_gap = float(rotation_gap)
        self.target = target
        self.actual = actual
        super().__init__(f"target unreachable, gap {self.residual_gap:.4f} m")


class InvalidAgent(CoEnvError, KeyError):
    pass


class CheckpointNotExecutable(CoEnvError, TypeError):
    pass


class TooManyViews(CoEnvError, ValueError):
    pass


class UnknownTask(CoEnvError, KeyError):
    pass


TaskNotFound = UnknownTask


class PlannerUnavailable(CoEnvError):
    pass


class CodeGenUnavailable(CoEnvError):
    pass


class MalformedResponse(CoEnvError, ValueError):
    def __init__(self, message: str, raw: Optional[str] = None):
        super().__init__(message)
        self.raw = raw


class ValidationFailed(CoEnvError, ValueError):
    def __init__(self, issues: list):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


class ViewBudgetExhausted(CoEnvError):
    pass


class BudgetExhausted(CoEnvError):
    pass


class MalformedPredicate(CoEnvError, ValueError):
    pass


class ScriptError(CoEnvError):
    def __init__(self, index: int, cause: str):
        self.index = index
        self.cause = cause
        super().__init__(f"statement {index}: {cause}")


class ScriptTimeout(CoEnvError):
    pass


class BadStepCount(CoEnvError, ValueError):
    pass


class SerializationError(CoEnvError, ValueError):
    pass


class StorageFull(CoEnvError, OSError):
    pass


class InvalidArgument(CoEnvError, ValueError):
    pass
