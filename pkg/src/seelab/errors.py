"""Exception hierarchy shared by every engine module.

Each exception carries a stable machine-readable code (``exc.code``) that the
CLI prints to stderr, so scripted callers can assert on failure modes without
parsing prose.
"""


class EngineError(Exception):
    """Base class for all domain errors raised by the engine."""

    code = "E_ENGINE"


class InvalidThresholds(EngineError):
    code = "E_INVALID_THRESHOLDS"


class NoForeground(EngineError):
    code = "E_NO_FOREGROUND"


class NoBackground(EngineError):
    code = "E_NO_BACKGROUND"


class DimensionMismatch(EngineError):
    code = "E_DIMENSION_MISMATCH"


class EmptyInput(EngineError):
    code = "E_EMPTY_INPUT"


class FormatError(EngineError):
    code = "E_FORMAT"


class RangeError(EngineError):
    code = "E_RANGE"


class ShapeMismatch(EngineError):
    code = "E_SHAPE_MISMATCH"


class IndivisibleChannels(EngineError):
    code = "E_INDIVISIBLE_CHANNELS"


class NoLabeledPixels(EngineError):
    code = "E_NO_LABELED_PIXELS"


class OracleFailure(EngineError):
    code = "E_ORACLE_FAILURE"


class InvalidPrompts(EngineError):
    code = "E_INVALID_PROMPTS"


class ConfigError(EngineError):
    code = "E_CONFIG"
