"""Exception and warning types raised across the package."""


class SeplearnError(Exception):
    pass


class DimensionMismatch(SeplearnError, ValueError):
    def __init__(self, which, expected, got):
        self.which, self.expected, self.got = which, expected, got
        super().__init__(f"{which}: expected shape {expected}, got {got}")


class HorizonMismatch(SeplearnError, ValueError):
    pass


class IndexOutOfHorizon(SeplearnError, IndexError):
    pass


class NumericalFailure(SeplearnError, ArithmeticError):
    pass


class SingularRiccati(NumericalFailure):
    def __init__(self, t, msg=""):
        self.t = t
        super().__init__(f"Riccati step t={t}: gain matrix not invertible {msg}".rstrip())


class SingularNormalEquations(NumericalFailure):
    pass


class SingularObservationCov(NumericalFailure):
    pass


class EmptyDensity(SeplearnError, ValueError):
    pass


class AlreadyBound(SeplearnError, ValueError):
    pass


class LengthMismatch(SeplearnError, ValueError):
    pass


class ConfigError(SeplearnError, ValueError):
    pass


class RankDeficient(UserWarning):
    """Actuation cannot reach every target; a least-squares residual remains."""


class NonConvergence(UserWarning):
    pass
