"""Exception types raised across the package."""


class VioInitError(Exception):
    """Base class for all errors raised by this package."""


class NotSkewSymmetric(VioInitError, ValueError):
    pass


class EmptyStream(VioInitError, ValueError):
    pass


class NonMonotonicTimestamps(VioInitError, ValueError):
    pass


class DegenerateInterval(VioInitError, ValueError):
    pass


class OffsetOutOfRange(VioInitError, ValueError):
    pass


class InsufficientKeyframes(VioInitError):
    pass


class NotConverged(VioInitError):
    pass


class RankDeficient(VioInitError):
    pass


class GravityDegenerate(VioInitError):
    pass


class NeverConverged(VioInitError):
    pass


class PointBehindCamera(VioInitError):
    pass


class DimensionMismatch(VioInitError, ValueError):
    pass


class SingularNormalEquations(VioInitError):
    pass


class OutOfRange(VioInitError, ValueError):
    pass


class NoVisibleLandmarks(VioInitError):
    pass


class DegenerateTrajectory(VioInitError):
    pass


class AllRunsFailed(VioInitError):
    pass


class ConfigError(VioInitError, ValueError):
    pass
