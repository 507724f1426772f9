"""Exception types shared across the package."""


class BodyflockError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(BodyflockError):
    """Invalid or inconsistent run configuration (bad key, range, or file)."""


class NotAntisymmetricError(BodyflockError):
    """A matrix expected to be antisymmetric is not, beyond tolerance."""


class SingularMatrixError(BodyflockError):
    """Polar factor requested for a (numerically) singular matrix."""


class NegativeDeterminantError(BodyflockError):
    """Polar factor requested for a matrix with negative determinant.

    The orthogonal factor would land in the det = -1 component, so the
    caller has to decide on a fallback.
    """


class DomainError(BodyflockError):
    """Axis-angle coordinates outside the chart where the operator is valid."""


class SolveFailureError(BodyflockError):
    """A linear solve that should be well-posed failed."""


class DegenerateWeightError(BodyflockError):
    """A weighting function integrates to zero; the profile feeding it is broken."""


class ValidationFailure(BodyflockError):
    """One or more validation checks failed."""
