"""Exception types shared across the package."""


class PhysmotionError(Exception):
    """Base class for all package errors."""


class InvalidTransformError(PhysmotionError):
    """Rotation input is not orthonormal with determinant +1."""


class InvalidInputError(PhysmotionError):
    """Input violates a documented precondition (NaN, bad shape, ...)."""


class DegenerateBaselineError(PhysmotionError):
    """Trajectory alignment got two frames with coincident translations."""


class EmptySceneError(PhysmotionError):
    """Scene mesh has no vertices or faces."""


class InvalidStateError(PhysmotionError):
    """Generalized state carries non-finite values."""


class SolverError(PhysmotionError):
    """QP solver failed to converge; message carries iteration diagnostics."""


class QPInfeasibleError(SolverError):
    """QP constraint set admits no solution."""


class UndefinedMetricError(PhysmotionError):
    """Metric is undefined for this input (too short, zero displacement)."""


class ConfigError(PhysmotionError):
    """Run configuration is inconsistent or references missing files."""


class MotionFormatError(PhysmotionError):
    """Motion or trajectory file failed to parse or validate."""
