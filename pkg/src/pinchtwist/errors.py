"""Exception hierarchy shared by all modules."""


class PinchTwistError(Exception):
    """Base class for library errors."""


class NumericalFailure(PinchTwistError):
    """A computation gave up (the CLI maps these to exit code 3)."""


class SingularMatrix(NumericalFailure):
    pass


class NoConvergence(NumericalFailure):
    pass


class Overflow(NumericalFailure):
    pass


class NonFiniteOrbit(NumericalFailure):
    pass


class SingularJacobian(NumericalFailure):
    pass


class DimensionTooLarge(PinchTwistError, ValueError):
    pass


class DimensionMismatch(PinchTwistError, ValueError):
    pass


class IllConditionedEigenbasis(NumericalFailure):
    pass


class TooLong(PinchTwistError, ValueError):
    pass


class NotAdmissible(PinchTwistError, ValueError):
    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class NotStochastic(PinchTwistError, ValueError):
    pass


class NotOnSameLeaf(PinchTwistError, ValueError):
    pass


class NotAsymptotic(PinchTwistError, ValueError):
    pass


class NotHyperbolic(PinchTwistError, ValueError):
    pass


class NotUnimodular(PinchTwistError, ValueError):
    pass


class DegeneratePeriod(PinchTwistError, ValueError):
    pass


class InvalidLattice(PinchTwistError, ValueError):
    pass


class SupportViolation(PinchTwistError, ValueError):
    pass


class ConfigError(PinchTwistError, ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""
