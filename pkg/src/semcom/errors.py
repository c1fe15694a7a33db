"""Exception types raised across the package."""


class SemcomError(Exception):
    """Base class for all package-specific errors."""


# --- data / clip handling ---

class MissingFile(SemcomError):
    pass


class TooFewFrames(SemcomError):
    pass


class BadDimensions(SemcomError):
    pass


class BadShift(SemcomError):
    pass


class ZeroSymbols(SemcomError):
    pass


# --- tensors and shapes ---

class ShapeMismatch(SemcomError):
    pass


class ChannelMismatch(SemcomError):
    pass


class BadChannelCount(SemcomError):
    pass


class LengthMismatch(SemcomError):
    pass


# --- numeric validity ---

class NonFiniteCorrelation(SemcomError):
    pass


class NonFiniteSnr(SemcomError):
    pass


class ZeroVector(SemcomError):
    pass


# --- budgets and configuration ---

class BudgetMismatch(SemcomError):
    pass


class ConfigError(SemcomError):
    def __init__(self, key: str, message: str = ""):
        self.key = key
        super().__init__(f"config error at '{key}'" + (f": {message}" if message else ""))


class IncompatibleCheckpoint(SemcomError):
    pass


class Diverged(SemcomError):
    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"loss became non-finite at step {step} (value={value!r})")


# --- metrics ---

class TooSmall(SemcomError):
    pass
