"""Exception hierarchy shared by every module of the package."""


class SSCError(Exception):
    """Base class for all errors raised by semisupcon."""


class ZeroNormRow(SSCError, ValueError):
    def __init__(self, row):
        self.row = int(row)
        super().__init__(f"row {self.row} has (near) zero L2 norm")


class NonPositiveTemperature(SSCError, ValueError):
    pass


class DimensionMismatch(SSCError, ValueError):
    pass


class NoValidAnchor(SSCError, ValueError):
    pass


class OddRowCount(SSCError, ValueError):
    pass


class LabelOutOfRange(SSCError, ValueError):
    pass


class TauOutOfRange(SSCError, ValueError):
    pass


class TraceMismatch(SSCError, ValueError):
    pass


class FormatVersionMismatch(SSCError, ValueError):
    pass


class ShapeMismatch(SSCError, ValueError):
    pass


class BadMagic(SSCError, ValueError):
    pass


class CountMismatch(SSCError, ValueError):
    pass


class TruncatedFile(SSCError, ValueError):
    pass


class InsufficientClassCount(SSCError, ValueError):
    pass


class NonFiniteLoss(SSCError, FloatingPointError):
    """Raised when a training step produces a NaN/Inf loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConfigError(SSCError):
    pass


class UnknownParameter(ConfigError):
    pass
