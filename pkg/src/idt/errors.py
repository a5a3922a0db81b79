"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` and estimation
failures from :class:`EstimationError`; the CLI maps the two families to
distinct exit codes.
"""

from __future__ import annotations


class IDTError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(IDTError, ValueError):
    """Input violates a documented precondition or type invariant."""


class WeightSumError(ValidationError):
    pass


class PosteriorRangeError(ValidationError):
    pass


class GeometryError(ValidationError):
    pass


class OffSupportError(ValidationError):
    pass


class UnsupportedScoreError(ValidationError):
    pass


class DegenerateCostError(ValidationError):
    pass


class ParameterRangeError(ValidationError):
    pass


class FamilyTooLargeError(ValidationError):
    pass


class NonMonotoneError(ValidationError):
    pass


class MissingAttributeError(ValidationError):
    pass


class EstimationError(IDTError):
    """The decision log cannot be explained under the requested regime."""


class EmptyLogError(EstimationError):
    pass


class InconsistentLogError(EstimationError):
    pass


class NoConsistentClassError(EstimationError):
    pass
