"""
Exception hierarchy for StateIS.

Every error carries the exit code the CLI reports for it.
"""

from typing import Optional


class StateISError(Exception):
    """Base class for all StateIS errors."""

    exit_code = 1


class InvalidModelError(StateISError, ValueError):
    """An MDP, policy, domain spec or config violates its invariants."""

    exit_code = 3


class ConfigError(StateISError):
    """An experiment config file is malformed."""

    exit_code = 4


class TrajectoryFormatError(StateISError):
    """A trajectory log or MDP interchange file is malformed."""

    exit_code = 5


class SupportViolationError(StateISError):
    """The behaviour policy gives zero probability to a sampled action."""

    exit_code = 6

    def __init__(self, state: int, action: int, message: Optional[str] = None):
        self.state = state
        self.action = action
        super().__init__(
            message
            or f"behaviour policy has no support for action {action} in state {state}"
        )


class DegeneratePolicyError(StateISError):
    """A policy row visited during sampling does not sum to one."""

    exit_code = 7

    def __init__(self, state: int, total: float):
        self.state = state
        self.total = total
        super().__init__(f"policy row for state {state} sums to {total!r}, not 1")


class InsufficientSampleError(StateISError):
    """A sample statistic needs more trajectories than were given."""

    exit_code = 8


class BudgetExceededError(StateISError):
    """Exhaustive enumeration would exceed its node budget."""

    exit_code = 9

    def __init__(self, nodes: int, budget: int):
        self.nodes = nodes
        self.budget = budget
        super().__init__(
            f"enumeration refused: {nodes} leaves exceed the budget of {budget}"
        )
