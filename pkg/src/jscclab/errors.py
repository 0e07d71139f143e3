"""Exception hierarchy shared by every subsystem."""


class JSCCError(Exception):
    pass


class ConfigurationError(JSCCError, ValueError):
    """Incompatible shapes, widths, or settings."""


class InputError(JSCCError, ValueError):
    """Data that cannot be processed (empty, silent, wrong length)."""


class FramingError(InputError):
    """Length is not a multiple of the required frame or hop size."""


class GraphError(JSCCError, RuntimeError):
    """Misuse of the autodiff graph."""


class AudioFormatError(InputError):
    """Malformed or unsupported WAV file."""


class ChannelError(InputError):
    """Symbols the channel cannot transmit, e.g. a zero-power frame."""


class CheckpointError(JSCCError):
    """Corrupt, truncated, or incompatible checkpoint file."""


class TrainingDiverged(JSCCError, RuntimeError):
    """Loss or gradient became non-finite."""

    def __init__(self, message: str, last_good=None):
        super().__init__(message)
        self.last_good = last_good
