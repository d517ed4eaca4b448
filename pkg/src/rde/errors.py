"""Exception hierarchy shared across the package.

Two families matter for the command-line exit-code mapping:
``ValidationError`` (bad inputs, malformed files, impossible requests;
exit code 2) and ``NumericError`` (linear-algebra failures discovered
mid-computation; exit code 3).  Everything raised on purpose by this
package derives from ``RdeError``.
"""


class RdeError(Exception):
    """Base class for every error this package raises deliberately."""


class ValidationError(RdeError):
    """Invalid input: shapes, values, files or configuration."""


class NumericError(RdeError):
    """Numerical failure: singular systems, broken invariants."""


# --- validation family -------------------------------------------------

class DimensionMismatch(ValidationError):
    """Array shapes do not line up with what the operation expects."""


class InsufficientData(ValidationError):
    """Too few samples for the requested estimate."""


class ClassTooSmall(ValidationError):
    """A class has fewer training samples than the variant requires."""


class UnknownClass(ValidationError):
    """A predicted label was never seen during fitting."""


class EmptyInput(ValidationError):
    """An operation that needs at least one element got none."""


class InvalidFpr(ValidationError):
    """Target false-positive rate outside the open interval (0, 1)."""


class MalformedManifest(ValidationError):
    """A manifest or header could not be parsed or breaks an invariant."""


class MissingFailedFeatures(ValidationError):
    """A failed attack was requested but carries no adversarial features."""


class InsufficientRecords(ValidationError):
    """The record pool cannot satisfy the requested sampling scenario."""


class UnknownDtype(ValidationError):
    """A serialized array announces a dtype this reader does not support."""


class SizeMismatch(ValidationError):
    """A serialized payload has a different length than its header claims."""


class DigestMismatch(ValidationError):
    """A serialized payload fails its integrity checksum."""


class TruncatedSection(ValidationError):
    """A serialized file ends before a section is complete."""


class VersionMismatch(ValidationError):
    """A serialized file uses a format version this reader does not know."""


class IoFailure(ValidationError):
    """The filesystem refused a read or write."""


# --- numeric family ----------------------------------------------------

class SingularCovariance(NumericError):
    """Covariance could not be factorized even at the maximum jitter."""


class NonSymmetric(NumericError):
    """A matrix that must be symmetric is not, beyond tolerance."""


class InsufficientRank(NumericError):
    """The centered kernel matrix has no positive eigenvalues."""
