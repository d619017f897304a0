"""Exception hierarchy shared by all modules."""


class FDEGrowthError(Exception):
    """Base class for every error raised by the package."""


class NonPositiveMass(FDEGrowthError, ValueError):
    pass


class MomentUndecidable(FDEGrowthError):
    """The first moment cannot be decided without analytic tail information."""


class WrongSupport(FDEGrowthError, ValueError):
    pass


class BadWindow(FDEGrowthError, ValueError):
    pass


class BadTheta(FDEGrowthError, ValueError):
    pass


class DomainError(FDEGrowthError, ValueError):
    pass


class LambdaMismatch(FDEGrowthError):
    """A declared growth class disagrees with the numerically estimated one."""


class NonMonotoneTail(FDEGrowthError):
    pass


class Inconclusive(FDEGrowthError):
    pass


class StepTooLarge(FDEGrowthError, ValueError):
    pass


class NonPositiveHistory(FDEGrowthError, ValueError):
    pass


class OverflowGuard(FDEGrowthError):
    """The log-state left the range the horizon was sized for."""


class WrongRegime(FDEGrowthError, ValueError):
    pass


class ConfigError(FDEGrowthError, ValueError):
    pass
