"""Exception types shared across the library."""


class ConfigurationError(ValueError):
    """Raised when a higher-layer parameter is outside its allowed set."""


class DegenerateInputError(RuntimeError):
    """Raised when an estimator is handed input it cannot work with
    (zero energy, vanishing noise estimate, fully masked spectrum)."""


class CalibrationError(RuntimeError):
    """Raised when a detection threshold is missing or was requested
    with too few trials for the target false-alarm rate."""
