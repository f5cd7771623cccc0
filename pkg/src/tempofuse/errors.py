"""Exception hierarchy shared by all tempofuse modules."""


class TempofuseError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(TempofuseError):
    """Bad configuration value; the message names the offending field."""


class InvalidConfig(ConfigError):
    pass


class NumericError(TempofuseError):
    """A computation produced or received numerically unusable values."""


class NonPositiveDisparity(NumericError, ValueError):
    pass


class NonPositiveDepth(NumericError, ValueError):
    pass


class NonPositiveVariance(NumericError, ValueError):
    pass


class DimensionMismatch(TempofuseError, ValueError):
    pass


class DisparityRangeInvalid(ConfigError, ValueError):
    pass


class DegenerateGeometry(NumericError):
    """Rigid solve is under-constrained (too few or collinear points)."""


class FrameOutOfRange(TempofuseError, IndexError):
    pass


class ChannelOrderMismatch(TempofuseError):
    pass


class NonFiniteLoss(NumericError):
    pass


class EmptyPairSet(TempofuseError, ValueError):
    pass


class EmptyMask(TempofuseError, ValueError):
    pass


class CausalityError(TempofuseError):
    """A frame was requested out of order by an online consumer."""
