"""Exception types raised by volpose.

Everything derives from :class:`ContractError` so callers (the CLI in
particular) can distinguish a violated module contract from an I/O or
configuration problem.
"""


class ContractError(Exception):
    """A module precondition or postcondition could not be met."""


class NonPositiveDepth(ContractError):
    pass


class SingularIntrinsics(ContractError):
    pass


class InfeasibleConstraints(ContractError):
    pass


class UnknownKind(ContractError):
    pass


class EmptyCloud(ContractError):
    pass


class NotNormalized(ContractError):
    pass


class NoViews(ContractError):
    pass


class NoValidJoints(ContractError):
    pass


class NoVisibleJoints(ContractError):
    pass


class DegenerateFrame(ContractError):
    """Torso vectors are collinear so no forward direction exists."""


class DegenerateConfiguration(ContractError):
    """Too few non-collinear joints for a Procrustes alignment."""


class NonFiniteObjective(ContractError):
    pass
