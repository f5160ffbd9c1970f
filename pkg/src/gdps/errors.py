"""Exception hierarchy shared by every gdps module.

Two error families map onto the CLI exit codes: ValidationError covers
malformed inputs and contract violations (exit 1), AnalysisError covers
numerical failures discovered mid-computation (exit 2).
"""


class GdpsError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GdpsError):
    """Bad input: malformed file, violated invariant, inconsistent shapes."""


class BundleFormatError(ValidationError):
    """A bundle directory, manifest, or .gdm payload failed validation."""


class AnalysisError(GdpsError):
    """A numerical routine could not produce a trustworthy result."""


class SingularCovarianceError(AnalysisError):
    """Covariance not invertible at lambda=0; retry with a positive ridge."""


class SvdConvergenceError(AnalysisError):
    """The SVD backend did not converge on this input."""


class TrainingDivergence(AnalysisError):
    """A training run exceeded the loss guard and was aborted."""
