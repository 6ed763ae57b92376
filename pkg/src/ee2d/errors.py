"""Error types shared across the package.

Every domain failure raises a subclass of EE2DError so the CLI can map
them to exit code 1 with the error name attached.
"""


class EE2DError(Exception):
    """Base class for all domain errors."""


class EmptyInput(EE2DError):
    """Input text is empty or whitespace-only."""


class SchemaError(EE2DError):
    """A dataset/adapter file violates the expected schema."""


class NormalizationError(EE2DError):
    """A probability vector does not sum to 1 within tolerance."""


class InconsistentShape(EE2DError):
    """Layer count or class count varies across samples of one dataset."""


class DimensionMismatch(EE2DError):
    """Vector/matrix dimensions do not line up."""


class SpecError(EE2DError):
    """A synthetic-data spec is invalid."""


class NonFiniteLoss(EE2DError):
    """Training produced a NaN/Inf loss."""


class NotReachable(EE2DError):
    """No layer satisfies the requested accuracy threshold."""


class EmptyFilter(EE2DError):
    """A dataset filter matched no samples."""
