"""Exception hierarchy shared by every module of the package."""


class SSGANError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SSGANError, ValueError):
    """Tensor extents do not satisfy an operation's contract."""


class ConfigError(SSGANError, ValueError):
    """A configuration value is out of range or inconsistent."""


class ContractError(SSGANError, RuntimeError):
    """An operation was called in a state its contract forbids."""


class DegenerateStatisticsError(SSGANError, ValueError):
    """Batch statistics requested over fewer than two elements."""


class RangeError(SSGANError, ValueError):
    pass


class OracleInvalidError(SSGANError, RuntimeError):
    """The function handed to the gradient oracle is not deterministic."""


class NonFiniteError(SSGANError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required.

    ``name`` identifies the parameter or loss component and ``step`` the
    training step (``None`` outside training).
    """

    def __init__(self, message, name=None, step=None):
        super().__init__(message)
        self.name = name
        self.step = step


class FormatError(SSGANError, ValueError):
    """A file on disk does not follow its binary format.

    ``offset`` is the byte offset at which decoding failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DatasetError(SSGANError, ValueError):
    """The dataset directory is missing files or is inconsistent."""


class MissingChannelError(ContractError):
    """An image lacks a channel the requested selection needs."""
