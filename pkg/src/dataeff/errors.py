"""Exception hierarchy shared across the toolkit."""


class DataEffError(Exception):
    """Base class for every error raised deliberately by this package."""


class DimensionMismatchError(DataEffError, ValueError):
    pass


class InvalidBitCountError(DataEffError, ValueError):
    pass


class TooFewImagesError(DataEffError, ValueError):
    pass


class CodecError(DataEffError, ValueError):
    pass


class MalformedHeaderError(CodecError):
    pass


class TruncatedPayloadError(CodecError):
    pass


class UnsupportedMaxvalError(CodecError):
    pass


class ZeroVectorError(DataEffError, ArithmeticError):
    pass


class NonFiniteLossError(DataEffError, ArithmeticError):
    """Training diverged: the loss (or the psi embedding norm) is not usable."""


class EmptyClassError(DataEffError, ValueError):
    pass


class MisalignedItemsError(DataEffError, ValueError):
    pass


class EmptyModelSetError(DataEffError, ValueError):
    pass


class ConfigError(DataEffError, ValueError):
    pass
