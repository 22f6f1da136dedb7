"""Exception hierarchy shared by every stage of the pipeline."""


class TrokensError(Exception):
    pass


class InvalidShape(TrokensError, ValueError):
    pass


# alias used by the projection / fusion helpers
ShapeError = InvalidShape


class BadMagic(TrokensError):
    pass


class UnsupportedVersion(TrokensError):
    pass


class TruncatedPayload(TrokensError):
    pass


class SplitOverlap(TrokensError):
    pass


class MissingAsset(TrokensError, FileNotFoundError):
    pass


class SceneError(TrokensError):
    pass


class InvalidClusterCount(TrokensError, ValueError):
    pass


class QuotaError(TrokensError, ValueError):
    pass


class InvalidGrid(TrokensError, ValueError):
    pass


class NoTracksError(TrokensError):
    pass


class ConfigError(TrokensError, ValueError):
    pass


class NonFinite(TrokensError, FloatingPointError):
    pass


class StaleTrace(TrokensError):
    pass


class InsufficientData(TrokensError):
    pass
