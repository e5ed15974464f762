"""Exception and warning types.

Each error class carries an ``exit_code`` used by the command-line
front end: 2 for configuration/contract problems, 3 for denoiser
failures, 4 for geometry failures.
"""

from __future__ import annotations


class TexroError(Exception):
    exit_code = 2


class ConfigError(TexroError):
    exit_code = 2


class GeometryError(TexroError):
    exit_code = 4


class ParseError(GeometryError):
    pass


class MissingUVs(GeometryError):
    pass


class DegenerateBounds(GeometryError):
    pass


class EmptyProjection(GeometryError):
    pass


class ZeroSelectedViews(GeometryError):
    pass


class TooLarge(TexroError):
    pass


class ResolutionMismatch(TexroError):
    pass


class ShapeMismatch(TexroError):
    pass


class ScheduleError(TexroError):
    pass


class DenoiserError(TexroError):
    exit_code = 3

    def __init__(self, message: str, *, attempts: int = 0, retry_events: list | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.retry_events = list(retry_events or [])


class RemoteUnavailable(DenoiserError):
    pass


class RemoteBadResponse(DenoiserError):
    pass


class DegenerateFaceWarning(UserWarning):
    pass


class NonManifoldWarning(UserWarning):
    pass


class CameraInsideMeshWarning(UserWarning):
    pass


class UVOverlapWarning(UserWarning):
    pass
