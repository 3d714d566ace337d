"""Exception hierarchy shared by every module of the package."""


class PerfmixError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class InvalidArgumentError(PerfmixError, ValueError):
    exit_code = 2


class UsageError(PerfmixError):
    exit_code = 2


class ConfigError(PerfmixError):
    exit_code = 3


class NumericalDegeneracyError(PerfmixError, ArithmeticError):
    exit_code = 4


class InvariantViolationError(PerfmixError):
    exit_code = 4


class SamplerStallError(PerfmixError):
    """Rejection sampler used up its proposal budget."""

    exit_code = 5

    def __init__(self, message, proposals=None, acceptance=None):
        super().__init__(message)
        self.proposals = proposals
        self.acceptance = acceptance


class InstabilityError(PerfmixError):
    """Annealing realization did not settle within the extension cap."""

    exit_code = 6


class NoCoalescenceError(PerfmixError):
    """Bounding chains did not meet within the epoch cap."""

    exit_code = 7

    def __init__(self, message, epochs=None):
        super().__init__(message)
        self.epochs = epochs
