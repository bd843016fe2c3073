"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inputs that violate an operation's contract (shapes, ranges, flags)."""


class UnsupportedInstanceError(ValueError):
    """Structurally valid input outside the supported domain (e.g. W2 above the size cap)."""


class DataError(ValueError):
    """Malformed experiment data, e.g. non-positive values passed to a log-log fit."""


class NumericalBlowupError(RuntimeError):
    """A particle state became non-finite during time stepping."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        detail = message or "non-finite particle state"
        super().__init__(f"{detail} at step {step}")
