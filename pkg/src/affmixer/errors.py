"""Exception types. The CLI maps each family onto an exit status."""


class AffMixerError(Exception):
    category = "runtime"


class ConfigError(AffMixerError, ValueError):
    category = "config-parse"


class DataValidationError(AffMixerError, ValueError):
    category = "data-validation"


class DimensionError(DataValidationError):
    """Tensor or file shape does not match what the consumer was configured for."""


class NonFiniteError(AffMixerError, FloatingPointError):
    category = "runtime"


class DivergenceError(NonFiniteError):
    def __init__(self, step: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at step {step}")
        self.step = step


class InsufficientDataError(AffMixerError, ValueError):
    category = "data-validation"
