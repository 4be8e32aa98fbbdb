"""Exception hierarchy shared by every module of the package."""


class KdError(Exception):
    """Base class for all index errors."""


class InvalidConfig(KdError, ValueError):
    pass


class CapacityOverflow(KdError):
    pass


class PoolExhausted(KdError):
    """No free slot left; the insert is rejected, never dropped."""


class PoolStateError(KdError):
    """Lifecycle misuse: double free, double return, foreign slot, use after free."""


class DimensionMismatch(KdError, ValueError):
    pass


class InvalidPoint(KdError, ValueError):
    """Non-finite coordinate or otherwise unusable query/point value."""


class RebuildInProgress(KdError):
    pass


class RebuildFailed(KdError):
    pass


class NotFound(KdError, LookupError):
    pass


class EmptyTree(KdError):
    pass


class KExceedsMax(KdError, ValueError):
    pass


class ResultOverflow(KdError):
    """More points inside a radius than the result buffer can hold."""


class ForestExhausted(KdError):
    pass
