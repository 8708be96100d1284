"""Exception hierarchy shared by every module."""


class EBMError(Exception):
    """Base class for toolkit errors."""


class InvalidParameter(EBMError, ValueError):
    """A parameter violates its physical or mathematical constraint."""


class NegativeInput(EBMError, ValueError):
    pass


class KinkPoint(EBMError, ValueError):
    """The coalbedo slope is undefined at a ramp corner."""


class EpsilonOutOfRange(EBMError, ValueError):
    """Operation requires epsilon_a in (0, 2)."""


class EpsilonNotSupercritical(EBMError, ValueError):
    """Operation requires epsilon_a > 2."""


class InvalidOptions(EBMError, ValueError):
    pass


class NotConverged(EBMError, RuntimeError):
    pass


class OnRamp(EBMError, ValueError):
    """Closed-form derivatives only hold on the flat coalbedo pieces."""


class Degenerate(EBMError, ArithmeticError):
    """Jacobian determinant too close to zero."""


class NoWarmEquilibrium(EBMError, RuntimeError):
    pass


class NotBistable(EBMError, RuntimeError):
    """Equilibrium census differs from (cold, intermediate, warm)."""


class NonConvergent(EBMError, RuntimeError):
    pass


class RangeInvalid(EBMError, ValueError):
    pass


class DomainError(EBMError, ValueError):
    pass


class LambdaZero(EBMError, ValueError):
    """Exchange coefficient is zero where a positive one is needed."""


class NoEntry(EBMError, RuntimeError):
    """Trajectory did not reach the escape region before the horizon."""


class ConfigError(EBMError, ValueError):
    pass
