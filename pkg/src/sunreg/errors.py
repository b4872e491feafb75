"""Exception and warning types raised across the package."""


class SunregError(Exception):
    """Base class for all package errors."""


class NonPositiveDefinite(SunregError, ValueError):
    """A matrix failed Cholesky factorization even after the jitter ladder."""


class DimensionMismatch(SunregError, ValueError):
    pass


class RegionTooImprobable(SunregError):
    """Truncation region too improbable for exact sampling and fallback disabled."""


class MomentDimExceeded(SunregError):
    pass


class EmptyIndexSet(SunregError, ValueError):
    pass


class RankDeficient(SunregError, ValueError):
    pass


class NonPositiveVariance(SunregError, ValueError):
    pass


class NonBinaryResponse(SunregError, ValueError):
    pass


class SigmaDimMismatch(SunregError, ValueError):
    pass


class FewerThanTwoCategories(SunregError, ValueError):
    pass


class NegativeResponse(SunregError, ValueError):
    pass


class MixedDimensions(SunregError, ValueError):
    pass


class CavityNotPD(SunregError):
    """Every EP site produced a non positive-definite cavity in one sweep."""


class MaxIterExceeded(RuntimeWarning):
    """Iterative scheme stopped at max_iter; the returned state has converged=False."""
