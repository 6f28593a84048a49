"""Exception hierarchy shared by the simulator modules."""


class MrrError(Exception):
    """Base class for all simulator errors."""


class ConfigError(MrrError, ValueError):
    """Invalid or unknown configuration value."""


class SimulationError(MrrError):
    """A physically or numerically impossible request."""


class DegenerateResonator(SimulationError):
    pass


class UnachievableQ(SimulationError):
    pass


class NoSolution(SimulationError):
    pass


class InsufficientQ(SimulationError):
    pass


class DimensionMismatch(SimulationError, ValueError):
    pass


class UnreachableTarget(SimulationError):
    pass


class NoConvergence(SimulationError):
    """Feedback loop ran out of rounds; ``report`` holds the partial result."""

    def __init__(self, message, report=None, phases=None):
        super().__init__(message)
        self.report = report
        self.phases = phases


class DegenerateFit(SimulationError):
    pass


class OutOfRange(SimulationError, ValueError):
    pass


class NegativeInput(SimulationError, ValueError):
    pass
