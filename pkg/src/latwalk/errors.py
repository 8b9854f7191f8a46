"""Exception hierarchy for latwalk."""


class LatwalkError(Exception):
    """Base class for all errors raised by this package."""


class InvalidStepLaw(LatwalkError, ValueError):
    pass


class NonZeroMean(InvalidStepLaw):
    pass


class Reducible(InvalidStepLaw):
    pass


class CharFnUnitCircleZero(Reducible):
    """The characteristic function equals 1 at a nonzero torus point.

    For a mean-zero walk with nondegenerate covariance this happens exactly
    when the support generates a proper sublattice of Z^2.
    """

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class DegenerateCovariance(InvalidStepLaw):
    pass


class StartOutsideWindow(LatwalkError, ValueError):
    pass


class WindowTooSmall(LatwalkError, ValueError):
    pass


class QuadratureNonConvergent(LatwalkError, RuntimeError):
    pass


class SolverNotConverged(LatwalkError, RuntimeError):
    pass


class RadiusTooSmall(LatwalkError, ValueError):
    pass


class ExteriorReducible(LatwalkError, ValueError):
    """The walk killed on A is not irreducible off A."""


class ExcessTruncation(LatwalkError, RuntimeError):
    pass


class ParityZero(LatwalkError, ValueError):
    """A predicted value vanishes because p^n of the relevant displacement is zero."""


class ConfigInvalid(LatwalkError, ValueError):
    pass


class InvariantViolation(LatwalkError, RuntimeError):
    pass
