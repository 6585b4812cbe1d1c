"""Exception types raised across the package."""


class AGPSError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AGPSError, ValueError):
    pass


class DimensionError(AGPSError, ValueError):
    pass


class SolverSizeError(AGPSError, ValueError):
    """Instance too large for the exact transport solver; use Sinkhorn."""


class EmptyInputError(AGPSError, ValueError):
    pass


class DegenerateDepthError(AGPSError, ValueError):
    pass


class BehindCameraError(AGPSError, ValueError):
    pass


class GeometryError(AGPSError, ValueError):
    pass


class ConstraintViolation(AGPSError):
    """TCP found outside an active exploration box."""

    def __init__(self, message, tcp=None, box=None):
        super().__init__(message)
        self.tcp = tcp
        self.box = box


class UnknownKeypointError(AGPSError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unknown keypoint {self.name!r}"


class MalformedCallError(AGPSError, ValueError):
    pass


class ProtocolError(AGPSError):
    """A remote agent payload could not be decoded or failed validation."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class PerceptionEmptyError(AGPSError):
    pass


class ActionBoundsError(AGPSError, ValueError):
    pass


class ExpertFailureError(AGPSError, RuntimeError):
    pass


class NonFiniteLossError(AGPSError, FloatingPointError):
    def __init__(self, message, batch_id=None):
        super().__init__(message)
        self.batch_id = batch_id


class CheckpointError(AGPSError, ValueError):
    pass


class RunAborted(AGPSError, RuntimeError):
    def __init__(self, message, metrics=None):
        super().__init__(message)
        self.metrics = metrics
