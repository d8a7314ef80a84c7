"""Exception hierarchy shared by every gradestc module."""


class GradESTCError(Exception):
    """Base class for all errors raised by this package."""


class NonFiniteError(GradESTCError, ValueError):
    pass


class RankRequestTooLarge(GradESTCError, ValueError):
    pass


class ShapeMismatch(GradESTCError, ValueError):
    pass


class DimensionMismatch(GradESTCError, ValueError):
    pass


class NoSignal(GradESTCError):
    """Raised when a basis cannot be initialized from an all-zero gradient."""


class ModeChangeAfterStart(GradESTCError):
    pass


class IndexOutOfRange(GradESTCError, IndexError):
    pass


class UninitializedStream(GradESTCError):
    pass


class LengthMismatch(GradESTCError, ValueError):
    pass


class OutOfOrderPayload(GradESTCError):
    pass


class WireFormatError(GradESTCError, ValueError):
    pass


class TooFewSamples(GradESTCError, ValueError):
    pass


class DivergenceDetected(GradESTCError, FloatingPointError):
    pass


class ConfigError(GradESTCError, ValueError):
    pass
