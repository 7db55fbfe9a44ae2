"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`SingregError`
so the CLI can turn it into a one-line diagnostic and a nonzero exit code.
"""


class SingregError(Exception):
    """Base class for all package errors."""


class InvalidDirection(SingregError, ValueError):
    pass


class InvalidQTensor(SingregError, ValueError):
    pass


class RuleTooCoarse(SingregError, ValueError):
    pass


class OutsideDomain(SingregError, ValueError):
    pass


class NearBoundary(SingregError, ValueError):
    pass


class DualDiverged(SingregError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InvalidEta(SingregError, ValueError):
    pass


class NotMarginForm(SingregError, TypeError):
    pass


class ProjectionFailed(SingregError, RuntimeError):
    pass


class EmptySublevel(SingregError, ValueError):
    pass


class LosesCoercivity(SingregError, ValueError):
    pass


class BoundaryContact(SingregError, ValueError):
    pass


class InfeasibleStart(SingregError, ValueError):
    pass


class NotElliptic(SingregError, ValueError):
    pass


class BallOutsideDomain(SingregError, ValueError):
    pass


class TooFewCells(SingregError, ValueError):
    pass


class StepTooLarge(SingregError, ValueError):
    pass


class ConfigError(SingregError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""
