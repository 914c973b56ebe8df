"""Exception hierarchy for the oblique-fewshot package.

Every error raised on purpose derives from OMError so callers can catch the
package's failures with a single except clause. The service layer maps these
onto HTTP error envelopes and the CLI maps the envelopes onto exit codes.
"""
from __future__ import annotations


class OMError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(OMError):
    """Operands have incompatible shapes."""


class NotOnManifold(OMError):
    """Matrix does not satisfy the unit-column-norm constraint."""


class DegenerateColumn(OMError):
    """A column norm is too small to normalize (< 1e-12)."""


class AntipodalColumn(OMError):
    """A column pair is antipodal, so the log map is undefined."""


class NotTangent(OMError):
    """Matrix is not in the tangent space of the given base point."""


class NonFinite(OMError):
    """A computation produced NaN or infinity."""


class OutOfRange(OMError):
    """A scalar argument is outside its documented domain."""


class ZeroWeightSum(OMError):
    """Anchor weight factors sum to (numerically) zero."""


class PyramidTooDeep(OMError):
    """Requested pyramid depth exceeds the spatial size of the maps."""


class InsufficientData(OMError):
    """A store cannot supply the requested episode protocol."""


class StoreFormatError(OMError):
    """A feature-store file violates the binary format."""


class StoreCompatError(OMError):
    """A store is structurally valid but incompatible with the request."""


class FitAborted(OMError):
    """Optimization failed; the message identifies the iteration."""


class EvaluationAborted(OMError):
    """An evaluation run could not produce a report."""
