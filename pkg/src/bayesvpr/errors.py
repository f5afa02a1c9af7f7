"""Exception types raised across the library."""


class BayesVprError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(BayesVprError):
    """Query embedding dimension does not match the map."""


class DegenerateSpread(BayesVprError):
    """Embedding-distance quantile spread too small to calibrate."""


class DegenerateMean(BayesVprError):
    """Weighted rotation sum is rank-deficient; average is ambiguous."""


class ZeroPosterior(BayesVprError):
    """All posterior mass vanished numerically; cannot renormalize."""


class NotConverged(BayesVprError):
    """Pose estimate requested before the filter converged."""


class ConfigInvalid(BayesVprError):
    """A configuration value is missing or out of range."""


class ParseError(BayesVprError):
    """A dataset file is malformed. Message carries file and line/offset."""


class CountMismatch(BayesVprError):
    """Files of a dataset disagree on element counts."""


class TraverseTooShort(BayesVprError):
    """Query traverse shorter than the requested trial length."""


class IndexOutOfRange(BayesVprError):
    """Requested trial index outside the sampled trial list."""
