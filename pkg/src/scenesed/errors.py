"""Exception types shared across the toolkit."""


class ScenesedError(Exception):
    """Base class for all toolkit errors."""


class InputTooShort(ScenesedError):
    """Waveform shorter than one analysis frame."""


class FormatError(ScenesedError):
    """Malformed binary file (bad magic, truncated payload, dimension mismatch)."""


class FilterbankDegenerate(ScenesedError):
    """Requested mel resolution leaves at least one filter with no spectrum bins."""


class ShapeError(ScenesedError):
    """Tensor shape incompatible with the operation."""


class DegenerateBatch(ScenesedError):
    """Batch statistics requested on a batch of fewer than two items."""


class LabelError(ScenesedError):
    """Target label violates its contract (not one-hot / not binary)."""


class NumericalError(ScenesedError):
    """Non-finite value where a finite one is required."""


class ConfigError(ScenesedError):
    """Invalid network or experiment configuration."""


class SpecError(ScenesedError):
    """Degenerate synthetic dataset specification."""


class InputError(ScenesedError):
    """Empty or otherwise unusable input to an evaluation routine."""
