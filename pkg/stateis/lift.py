"""
Lift domains: an agent on a line between two terminal bounds.

State coordinates run from -B to B and map to indices coordinate + B.
Lift states (1 <= |s| <= B - 2) carry the agent outward whatever it does;
the remaining non-terminal states (0 and +-(B - 1)) are decision points.
"""

import logging
from dataclasses import dataclass, field
from typing import FrozenSet, Optional

import numpy as np

from .errors import InvalidModelError
from .mdp import TabularMdp, TabularPolicy

logger = logging.getLogger(__name__)

LEFT = 0
RIGHT = 1
ACTION_NAMES = ("left", "right")

DEFAULT_NOISE = 0.1
DEFAULT_HORIZON_CAP = 100
LIFT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LiftDomainSpec:
    """
    Parameters of a lift domain.

    Attributes:
        bound: Half-width B of the line (B >= 3).
        noise: Transition noise delta in [0, 0.5); 0 gives the deterministic domain.
        horizon_cap: Maximum episode length.
        policy_noise: Probability that the evaluation policy takes the worse
            action; follows `noise` when None.
    """

    bound: int
    noise: float = DEFAULT_NOISE
    horizon_cap: int = DEFAULT_HORIZON_CAP
    policy_noise: Optional[float] = None

    def __post_init__(self) -> None:
        if isinstance(self.bound, bool) or not isinstance(self.bound, int) or self.bound < 3:
            raise InvalidModelError(f"bound must be an integer >= 3, got {self.bound!r}")
        if not 0.0 <= self.noise < 0.5:
            raise InvalidModelError(f"noise must lie in [0, 0.5), got {self.noise!r}")
        if self.policy_noise is not None and not 0.0 <= self.policy_noise < 0.5:
            raise InvalidModelError(
                f"policy_noise must lie in [0, 0.5), got {self.policy_noise!r}"
            )
        if self.horizon_cap < 1:
            raise InvalidModelError(f"horizon_cap must be positive, got {self.horizon_cap!r}")

    @classmethod
    def deterministic(cls, bound: int, horizon_cap: int = DEFAULT_HORIZON_CAP) -> "LiftDomainSpec":
        return cls(bound=bound, noise=0.0, horizon_cap=horizon_cap)

    @classmethod
    def stochastic(
        cls, bound: int, noise: float = DEFAULT_NOISE, horizon_cap: int = DEFAULT_HORIZON_CAP
    ) -> "LiftDomainSpec":
        return cls(bound=bound, noise=noise, horizon_cap=horizon_cap)

    @property
    def eval_noise(self) -> float:
        return self.noise if self.policy_noise is None else self.policy_noise

    @property
    def domain_size(self) -> int:
        return 2 * self.bound + 1


@dataclass(frozen=True)
class DomainBundle:
    """A built lift domain with its canonical policies and lift states."""

    mdp: TabularMdp
    eval_policy: TabularPolicy
    behaviour_policy: TabularPolicy
    lift_states: FrozenSet[int]
    spec: LiftDomainSpec = field(repr=False)

    @property
    def bound(self) -> int:
        return self.spec.bound

    @property
    def domain_size(self) -> int:
        return self.spec.domain_size

    @property
    def r_max(self) -> float:
        """Largest absolute reward, the terminal bonus B."""
        return float(self.spec.bound)

    @property
    def start_state(self) -> int:
        return self.index_of(0)

    def index_of(self, coordinate: int) -> int:
        if abs(coordinate) > self.bound:
            raise InvalidModelError(
                f"coordinate {coordinate} is outside [-{self.bound}, {self.bound}]"
            )
        return coordinate + self.bound

    def coordinate_of(self, index: int) -> int:
        return index - self.bound


def _is_lift_coordinate(coordinate: int, bound: int) -> bool:
    return 1 <= abs(coordinate) <= bound - 2


def build_lift_domain(spec: LiftDomainSpec) -> DomainBundle:
    """
    Build the lift domain described by `spec`.

    Decision states move in the chosen direction with probability 1 - delta
    and the opposite way otherwise. Lift states move outward with
    probability 1 - delta for both actions. Entering -B pays -B, entering
    +B pays +B, every other transition pays -1.
    """
    bound, delta = spec.bound, spec.noise
    size = spec.domain_size
    transition = np.zeros((size, 2, size))
    reward = np.full((size, 2, size), -1.0)
    reward[:, :, 0] = -float(bound)
    reward[:, :, size - 1] = float(bound)

    for index in range(size):
        coordinate = index - bound
        if abs(coordinate) == bound:
            transition[index, :, index] = 1.0
            continue
        for action, direction in ((LEFT, -1), (RIGHT, 1)):
            if _is_lift_coordinate(coordinate, bound):
                direction = 1 if coordinate > 0 else -1
            transition[index, action, index + direction] += 1.0 - delta
            transition[index, action, index - direction] += delta

    start = np.zeros(size)
    start[bound] = 1.0
    mdp = TabularMdp(
        transition=transition,
        reward=reward,
        terminal_states=frozenset({0, size - 1}),
        start_distribution=start,
        horizon_cap=spec.horizon_cap,
    )

    eval_noise = spec.eval_noise
    eval_probs = np.tile([eval_noise, 1.0 - eval_noise], (size, 1))
    lift_states = frozenset(
        c + bound for c in range(-bound, bound + 1) if _is_lift_coordinate(c, bound)
    )
    logger.debug(
        "built lift domain B=%d delta=%g with %d lift states", bound, delta, len(lift_states)
    )
    return DomainBundle(
        mdp=mdp,
        eval_policy=TabularPolicy(eval_probs).validate(),
        behaviour_policy=TabularPolicy.uniform(size, 2),
        lift_states=lift_states,
        spec=spec,
    )


def detect_lift_states(mdp: TabularMdp) -> FrozenSet[int]:
    """
    Non-terminal states whose transition and reward rows agree across all actions.

    A single-action MDP makes every non-terminal state a lift state.
    """
    found = set()
    for state in mdp.non_terminal_states:
        t_rows = mdp.transition[state]
        r_rows = mdp.reward[state]
        if np.all(np.abs(t_rows - t_rows[0]) <= LIFT_TOLERANCE) and np.all(
            np.abs(r_rows - r_rows[0]) <= LIFT_TOLERANCE
        ):
            found.add(state)
    return frozenset(found)


def with_zero_rewards(mdp: TabularMdp) -> TabularMdp:
    """Copy of the MDP with every reward set to zero."""
    return mdp.with_rewards(np.zeros_like(mdp.reward))
