"""Exception hierarchy shared across the package."""


class MalimgError(Exception):
    """Base class for all errors raised by malimg."""


# -- conversion -------------------------------------------------------------

class ConversionError(MalimgError, ValueError):
    pass


class DexError(ConversionError):
    """The byte stream cannot be interpreted as a DEX container."""


class MalformedMagic(DexError):
    pass


class TruncatedHeader(DexError):
    pass


class InconsistentOffsets(DexError):
    pass


class EmptyInput(ConversionError):
    pass


class ShapeMismatch(ConversionError):
    pass


# -- tensors / networks -----------------------------------------------------

class ShapeError(MalimgError, ValueError):
    pass


class GraphError(MalimgError, RuntimeError):
    pass


class NonFiniteError(MalimgError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class InvalidTarget(MalimgError, ValueError):
    pass


class CheckpointError(MalimgError, ValueError):
    pass


# -- optimisation -----------------------------------------------------------

class NonFiniteGradient(NonFiniteError):
    pass


class NonFiniteState(NonFiniteError):
    pass


# -- augmentation -----------------------------------------------------------

class BatchTooSmall(MalimgError, ValueError):
    pass


# -- metrics ----------------------------------------------------------------

class MetricsError(MalimgError, ValueError):
    pass


class IndexOutOfRange(MetricsError):
    pass


class DegenerateLabels(MetricsError):
    pass


class EmptyHistory(MetricsError):
    pass


# -- harness ----------------------------------------------------------------

class ConfigError(MalimgError, ValueError):
    pass


class ConfigMismatch(ConfigError):
    pass


class DataError(MalimgError, ValueError):
    pass


class MissingSplit(DataError):
    pass


class EmptyClass(DataError):
    pass


class UnreadableImage(DataError):
    pass


class NonFiniteLoss(NonFiniteError):
    pass
