"""
Error types raised across the toolkit.
Each error carries the process exit code the CLI reports for it.
"""


class ReconError(Exception):
    """Base error: a runtime failure (exit code 2)."""

    exit_code = 2

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class UsageError(ReconError):
    """Bad flags or an invalid configuration document."""

    exit_code = 1


class ShapeError(ReconError):
    """Operands of a tensor op have incompatible shapes."""


class NonFiniteError(ReconError):
    """NaN or Inf met where finite values are required."""


class GraphError(ReconError):
    """Misuse of the recording graph or its parameters (non-scalar loss, duplicate names)."""


class CameraError(ReconError):
    """Camera parameters violate the pinhole model invariants."""


class DegenerateTrackError(ReconError):
    """A track coincides with a camera center."""


class CombinationLimitError(ReconError):
    """Too many view combinations to enumerate exhaustively."""


class FormatError(ReconError):
    """A file does not follow its expected on-disk layout."""


class SceneError(ReconError):
    """A synthetic scene specification cannot be realized."""


class TrainingDivergedError(ReconError):
    """Training produced a non-finite loss."""


class EvaluationError(ReconError):
    """Metrics requested on an empty or mismatched input."""


class EmptyBatchError(ReconError):
    """A loss was requested over a ray batch with no valid ray."""
