"""Exception types shared across the package."""


class SingularCovariance(Exception):
    """Covariate covariance matrix cannot be factorized (or is numerically singular)."""


class MaxDrawsExceeded(Exception):
    """Candidate-draw budget exhausted before an acceptable allocation was found."""


class DimensionMismatch(ValueError):
    """Array shapes disagree with the design or with each other."""


class ParseError(ValueError):
    """An input file is malformed."""
