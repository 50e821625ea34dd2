"""Exception hierarchy for the splatforge pipeline.

Every error raised on a contract violation derives from SplatforgeError so
callers (and the CLI) can distinguish pipeline faults from programming bugs.
Gate trips are modeled as dedicated exceptions carrying partial results.
"""

from __future__ import annotations


class SplatforgeError(Exception):
    """Base class for all pipeline errors."""


class InvalidInput(SplatforgeError, ValueError):
    """An argument violates a documented precondition."""


class EmptyInput(InvalidInput):
    """An operation received an empty cloud/sequence where data is required."""


class InvalidTransform(InvalidInput):
    """Rotation block is not orthonormal with determinant +1."""


class ParseError(SplatforgeError):
    """A file could not be parsed. Carries path and, when known, line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class UnsupportedFormat(ParseError):
    """File is syntactically valid but uses features we do not support."""


class UnsupportedCameraModel(UnsupportedFormat):
    """Sparse model declares a camera model other than PINHOLE/SIMPLE_PINHOLE."""


class MissingInput(SplatforgeError):
    """A required file, directory, or cross-referenced record is absent."""


class ImageTooSmall(InvalidInput):
    """Image is below the minimum size for feature detection."""


class InvalidColor(InvalidInput):
    """Color values fall outside [0, 1]."""


class MissingColors(InvalidInput):
    """Operation requires a colored cloud but colors are absent."""


class MissingNormals(InvalidInput):
    """Operation requires normals but the cloud has none."""


class InsufficientPoints(InvalidInput):
    """Too few points for the requested computation."""


class UnsortedTimestamps(InvalidInput):
    """Timestamp sequence is not strictly increasing."""


class UndefinedRatio(InvalidInput):
    """A reported ratio has a zero denominator."""


class ConfigError(SplatforgeError):
    """Pipeline configuration is malformed or contains unknown keys."""


class RegistrationFailed(SplatforgeError):
    """Global registration found no acceptable hypothesis."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class IcpObjectiveError(SplatforgeError):
    """The weighted ICP objective increased after a solve step."""


class NoCorrespondences(SplatforgeError):
    """ICP found no point pairs within the correspondence distance."""


class OdometryBreak(SplatforgeError):
    """Sequential scan alignment dropped below the fitness floor.

    Carries everything accumulated before the break so callers can persist
    partial results.
    """

    def __init__(self, index: int, fitness: float, trajectory, map_cloud, pair_stats):
        self.index = index
        self.fitness = fitness
        self.trajectory = trajectory
        self.map_cloud = map_cloud
        self.pair_stats = pair_stats
        super().__init__(
            f"odometry break at scan {index}: fitness {fitness:.4f} below floor"
        )


class AlignmentGateFailed(SplatforgeError):
    """Final SfM-to-LiDAR ICP fitness fell below the acceptance gate."""

    def __init__(self, fitness: float, gate: float, outcome=None):
        self.fitness = fitness
        self.gate = gate
        self.outcome = outcome
        super().__init__(
            f"alignment gate failed: fitness {fitness:.4f} < gate {gate:.4f}"
        )


class VerificationFailed(SplatforgeError):
    """A run directory could not be verified (missing or unreadable manifest)."""
