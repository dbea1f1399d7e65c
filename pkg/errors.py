"""
Error types for cbfnav.

Invalid detections, infeasible safety filters and degenerate attitude
commands are reported as values; only the conditions below raise.
"""


class CbfNavError(Exception):
    """Base class for every error raised by this package."""


class FrameError(CbfNavError):
    """A rotation or rigid transform violates its invariants."""


class GimbalLockError(CbfNavError):
    """Euler extraction requested too close to pitch = ±90 degrees."""


class IntegrationFault(CbfNavError):
    """The vehicle integrator was given a bad step or produced a non-finite state."""


class GatedMeasurementError(CbfNavError):
    """A consumer tried to read the pose fields of an invalid estimate."""


class EmptyTelemetryError(CbfNavError):
    """Artefacts were requested for an empty record stream."""


class ConfigError(CbfNavError):
    """Scenario configuration failed validation.

    Args:
        message (str): Human readable reason.
        field_path (str): Dotted path of the offending field, "" for the root.
    """

    def __init__(self, message: str, field_path: str = ""):
        self.field_path = field_path
        prefix = f"{field_path}: " if field_path else ""
        super().__init__(f"{prefix}{message}")
