"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`QgdlabError`,
which is itself a ``ValueError`` so callers that only care about "bad input"
can catch the builtin.
"""


class QgdlabError(ValueError):
    pass


# geometry
class InfeasiblePackingError(QgdlabError):
    pass


class OracleScaleError(QgdlabError):
    pass


class DegenerateInputError(QgdlabError):
    pass


class CodewordRangeError(QgdlabError):
    pass


class NetMembershipError(QgdlabError):
    pass


# objectives
class ShapeError(QgdlabError):
    pass


class DegenerateCurvatureError(QgdlabError):
    pass


class IllPosedConeError(QgdlabError):
    pass


# codec
class CodecDomainError(QgdlabError):
    pass


class FormatError(QgdlabError):
    pass


class OutOfRadiusError(QgdlabError):
    pass


class InvalidLambdaError(QgdlabError):
    pass


# qgd
class InvalidSpectrumError(QgdlabError):
    pass


class ContractViolationError(QgdlabError):
    pass


class InvariantError(QgdlabError):
    """Raised when one of the Q1/Q2/Q3 invariants is found broken.

    ``which`` names the invariants that failed, e.g. ``("Q3",)``.
    """

    def __init__(self, message, which=(), round_index=None):
        super().__init__(message)
        self.which = tuple(which)
        self.round_index = round_index


# runtime
class ScheduleViolationError(QgdlabError):
    pass


class NonTerminationError(QgdlabError):
    pass


# lower-bound lab
class ParametersOutOfRangeError(QgdlabError):
    pass


class RecoveryError(QgdlabError):
    pass


class InstanceConstructionError(QgdlabError):
    pass
