"""Exception hierarchy shared by every module in the package."""


class MdpError(Exception):
    """Base class for all domain errors raised by fplmdp."""


class InvalidMdp(MdpError):
    """An MDP description violates a structural invariant."""


class NotStronglyConnected(InvalidMdp):
    pass


class NotCommunicating(InvalidMdp):
    pass


class AssumptionViolated(InvalidMdp):
    """No state with a deterministic self-loop action exists."""


class ExploringStartsViolated(InvalidMdp):
    pass


class CapExceeded(MdpError):
    pass


class NoPath(MdpError):
    pass


class Infeasible(MdpError):
    pass


class DecompositionFailed(MdpError):
    pass


class NoExpert(MdpError):
    pass


class NonTermination(MdpError):
    pass


class BadShape(MdpError):
    pass


class DegenerateFit(MdpError):
    pass


class InvariantViolation(MdpError):
    """A run-time accounting identity failed to hold."""


class ConfigError(Exception):
    """Experiment configuration could not be parsed or validated."""
