"""Exception hierarchy shared by all levyou modules."""


class LevyOUError(Exception):
    """Base class for all errors raised by this package."""


class RankDeficientB(LevyOUError):
    """The embedding matrix B has numerical rank below its column count."""


class KalmanFailure(LevyOUError):
    """rank[B, AB, ..., A^(N-1)B] < N at the working tolerance."""


class StepTooLarge(LevyOUError):
    """Requested ODE step exceeds the integration interval."""


class BadParam(LevyOUError):
    """A model parameter violates its admissible range."""


class QuadratureFailure(LevyOUError):
    """Adaptive quadrature exhausted its budget without converging."""


class Degenerate(LevyOUError):
    """Spherical measure concentrates on a hyperplane."""


class CutoffTooLarge(LevyOUError):
    """Small-jump cutoff exceeds the truncation radius r0."""


class DegenerateFit(LevyOUError):
    """Not enough (or unusable) samples for a log-log slope fit."""


class GridTooSmall(LevyOUError):
    """Characteristic function has not decayed at the Fourier grid boundary."""


class SingularTime(LevyOUError):
    """Time is below the scale resolvable by any admissible grid."""


class StepUnderflow(LevyOUError):
    """Finite-difference step collapsed below floating-point resolution."""


class UEViolation(LevyOUError):
    """sigma_0 fails the uniform ellipticity bounds on the time grid."""


class SchemaError(LevyOUError):
    """Experiment configuration violates the documented schema."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
