class MetastableMdpError(Exception):
    """Base class for all errors raised by metastable_mdp"""


class InvalidParams(MetastableMdpError, ValueError):
    pass


class InvalidState(MetastableMdpError, ValueError):
    pass


class ActionNotAvailable(MetastableMdpError, ValueError):
    pass


class BondNotApplicable(MetastableMdpError, ValueError):
    pass


class NoSusceptibleBond(MetastableMdpError, RuntimeError):
    pass


class StepBudgetExceeded(MetastableMdpError, RuntimeError):
    pass


class NotReducible(MetastableMdpError, RuntimeError):
    """Relaxation ended in a configuration that is not a single robust rectangle"""


class MaxEpochsExceeded(MetastableMdpError, RuntimeError):
    pass


class BoundsExceeded(MetastableMdpError, RuntimeError):
    """Landscape search hit its state budget before finishing"""
