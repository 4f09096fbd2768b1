from enum import IntEnum


class ExitCode(IntEnum):
    """Process exit codes shared by every subcommand"""
    OK = 0
    FAILURE = 1
    CONFIG = 2
    SIMULTANEITY = 3
    BUDGET = 4
    COVERAGE = 5
    CHECKS_FAILED = 6


class CollisionLabError(Exception):
    """Base class for all domain errors raised by the services"""


class ConfigError(CollisionLabError, ValueError):
    """Invalid configuration file, batch file or environment setting"""


# Dynamics

class SimulationError(CollisionLabError):
    pass


class OverlapError(SimulationError):
    """Two balls are closer than a diameter (beyond the contact tolerance)"""


class NonContactError(SimulationError):
    """A collision was applied to a pair that is not touching"""


class NonApproachingError(SimulationError):
    """A collision was applied to a pair that is not approaching"""


class SimultaneityError(SimulationError):
    """Two distinct pairs would collide at (numerically) the same time"""

    def __init__(self, t: float, first_pair, second_pair, gap: float):
        self.t = t
        self.first_pair = tuple(first_pair)
        self.second_pair = tuple(second_pair)
        self.gap = gap
        super().__init__(
            f"Simultaneous collisions near t={t!r}: pairs {self.first_pair} and "
            f"{self.second_pair} are {gap:.3e} apart in time"
        )


class EventBudgetError(SimulationError):
    """A run needed more collision events than its budget allows"""


class OutOfSpanError(SimulationError):
    """A time outside the span covered by an event log was requested"""


class ReplayMismatchError(SimulationError):
    """Replaying a log does not reproduce its recorded states"""


# Frames

class FrameError(CollisionLabError):
    pass


class ZeroEnergyError(FrameError):
    """All velocities are equal, so there is nothing to normalize"""


class UncertifiedTailError(FrameError):
    """A log tail is not known to be in permanent free flight"""


class ExternalCollisionError(FrameError):
    """A subfamily collides with a ball outside it on its interval"""


# Decomposition

class DecompositionError(CollisionLabError):
    pass


class DegenerateFamilyError(DecompositionError):
    """Operation needs at least two balls"""


class ChainLemmaError(DecompositionError):
    """The proximity graph was connected where the chain argument forbids it"""


class TreeDepthError(DecompositionError):
    """The branching tree is deeper than the number of balls allows"""


class CoverageError(DecompositionError):
    """A collision is not covered by any leaf or endpoint bucket"""


# Bounds and scenarios

class BoundParameterError(CollisionLabError, ValueError):
    """Bound formula called outside its parameter range"""


class InfeasibleScenarioError(CollisionLabError):
    """Scenario parameters cannot produce a valid initial state"""


def exit_code_for(error: Exception) -> ExitCode:
    """Exit code a command reports for a domain error"""
    if isinstance(error, (ConfigError, BoundParameterError, InfeasibleScenarioError)):
        return ExitCode.CONFIG
    if isinstance(error, SimultaneityError):
        return ExitCode.SIMULTANEITY
    if isinstance(error, EventBudgetError):
        return ExitCode.BUDGET
    if isinstance(error, CoverageError):
        return ExitCode.COVERAGE
    return ExitCode.FAILURE
