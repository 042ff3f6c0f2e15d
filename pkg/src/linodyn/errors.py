"""Exception hierarchy shared across the package."""


class LinodynError(Exception):
    """Base class for all linodyn-specific errors."""


class ComplexSpectrumError(LinodynError):
    """The matrix has eigenvalues with non-negligible imaginary parts."""


class NearDegenerateError(LinodynError):
    """Two eigenvalues are too close for a stable eigenvector basis."""

    def __init__(self, msg, min_separation=None):
        super().__init__(msg)
        self.min_separation = min_separation


class NonPositiveEigenvalueError(LinodynError):
    """Real matrix logarithm requested for a matrix with an eigenvalue <= 0."""


class SingularWindowError(LinodynError):
    """The d-column observation window is numerically singular."""


class SingularAggregationSumError(LinodynError):
    """The propagator sum used by the aggregated inverse map is singular."""


class NotPositiveDefiniteError(LinodynError):
    """Cholesky factorization failed on a matrix required to be PD."""


class NonFiniteError(LinodynError):
    """Objective or gradient evaluated to a non-finite value."""

    def __init__(self, msg, theta=None):
        super().__init__(msg)
        self.theta = theta
