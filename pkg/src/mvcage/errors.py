"""Exception types raised across the package.

Each class maps to one CLI exit-code family through ``exit_code``:
2 for configuration/argument problems, 3 for numerical or model failures,
4 for I/O.
"""


class MvcageError(Exception):
    exit_code = 3


class InvalidArgument(MvcageError, ValueError):
    exit_code = 2


class UnsupportedDomain(InvalidArgument):
    pass


class UnsupportedLoss(InvalidArgument):
    pass


class ConfigError(InvalidArgument):
    pass


class ModelInvalid(MvcageError):
    """Parametric cross-covariance is not positive semidefinite."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class InsufficientReplications(MvcageError):
    pass


class FactorizationFailure(MvcageError):
    pass


class InvalidCovariance(MvcageError):
    pass


class InconsistentEigensystem(MvcageError):
    pass


class IndefiniteScoreCovariance(MvcageError):
    pass


class RankDeficient(MvcageError):
    pass


class DegeneratePosterior(MvcageError):
    pass


class InsufficientDraws(MvcageError):
    pass


class FormatError(MvcageError):
    exit_code = 4


class NoValidDraws(MvcageError):
    pass
