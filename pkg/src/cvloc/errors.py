"""Exception types shared across the toolkit."""

from __future__ import annotations


class CvlocError(Exception):
    """Base class for all cvloc errors."""


class DomainError(CvlocError, ValueError):
    """An argument value lies outside the mathematical domain of an operation."""


class ContractError(CvlocError, ValueError):
    """Inputs violate a structural contract (shape, channel count, emptiness)."""


class FormatError(CvlocError):
    """A CVLS file failed parsing or validation.

    ``field`` names the offending part of the file when known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class SingularSystemError(CvlocError):
    """Cholesky factorization failed on a damped normal-equation system."""

    def __init__(self, message: str, hessian=None):
        super().__init__(message)
        self.hessian = hessian


class DegenerateProblemError(CvlocError):
    """No valid points remain, so the alignment objective is undefined.

    When raised from the pose solver, ``pose`` holds the last iterate and
    ``report`` the partial optimization trace (``converged`` is False).
    """

    def __init__(self, message: str, pose=None, report=None):
        super().__init__(message)
        self.pose = pose
        self.report = report


class GenerationError(CvlocError):
    """Synthetic scene generation could not produce a usable scene."""


class ConfigError(CvlocError):
    """A configuration file or value is invalid."""
