class GuidanceError(Exception):
    """Base class for every error raised by stcguide."""


class DomainError(GuidanceError, ValueError):
    """Numeric input outside the domain of an operation."""


class StructureError(GuidanceError, ValueError):
    """Malformed formula tree or mismatched dimensions."""


class PropagationError(GuidanceError):
    def __init__(self, message: str, segment: int | None = None):
        if segment is not None:
            message = f"segment {segment}: {message}"
        super().__init__(message)
        self.segment = segment


class SubproblemError(GuidanceError):
    """Convex subproblem could not be solved or produced an inconsistent answer."""


class CertificationError(GuidanceError):
    def __init__(self, message: str, interval: tuple[float, float] | None = None):
        if interval is not None:
            message = f"{message} on [{interval[0]:.6g}, {interval[1]:.6g}] s"
        super().__init__(message)
        self.interval = interval


class ConfigError(GuidanceError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
