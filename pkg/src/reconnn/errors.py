"""Exception types shared across the package."""


class ReconError(Exception):
    """Base class for every error raised by reconnn."""


class GeometryError(ReconError, ValueError):
    """Heat-sink dimensions are inconsistent (e.g. non-integer fin count)."""


class ResolutionError(ReconError, ValueError):
    """Voxel grid too coarse to resolve a plate thickness."""


class StabilityError(ReconError, ValueError):
    """Explicit time step above the stability bound."""


class DivergenceError(ReconError, FloatingPointError):
    """Non-finite values appeared in a field or loss."""


class DomainError(ReconError, ValueError):
    """Argument outside its admissible set (bad plane label, too few classes, ...)."""


class RangeError(ReconError, ValueError):
    """Degenerate or violated numeric range (empty colour range, extrapolation)."""


class ShapeError(ReconError, ValueError):
    """Array shape does not match what a layer or model expects."""


class StateError(ReconError, RuntimeError):
    """Cached forward state does not belong to the network it is used with."""


class OptimizerError(ReconError, FloatingPointError):
    """Non-finite gradient handed to an optimizer; no update was applied."""


class GridError(ReconError, ValueError):
    """Patch grid does not tile the image exactly."""


class TrainingError(ReconError, RuntimeError):
    """Training diverged. ``checkpoint`` holds the last finite parameters."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class InputError(ReconError, ValueError):
    """Malformed numeric input (e.g. probability rows that do not sum to one)."""


class OrderingError(ReconError, ValueError):
    """Sample coordinates are not strictly increasing."""


class SingularNodeError(ReconError, ValueError):
    """Duplicate interpolation nodes."""


class IncompleteStateError(ReconError, ValueError):
    """A 3D reassembly is missing one of the six planes."""


class ConfigError(ReconError, ValueError):
    """Study configuration could not be parsed or validated."""


class DependencyError(ReconError, RuntimeError):
    """A pipeline stage was requested before the stage it depends on."""
