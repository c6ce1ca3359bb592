"""
Tabular finite-horizon MDPs, policies and seeded trajectory sampling.

States and actions are integer indices. Rewards are indexed by
(state, action, next_state) so that a terminal bonus can depend on which
terminal state is entered.
"""

import bisect
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, IO, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np

from .errors import (
    DegeneratePolicyError,
    InvalidModelError,
    SupportViolationError,
    TrajectoryFormatError,
)

logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-12
SEED_MODULUS = 2**64

Step = Tuple[int, int, float]
PathLike = Union[str, Path]


def as_seed(seed: int) -> int:
    """Validate a 64-bit unsigned seed."""
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise InvalidModelError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < SEED_MODULUS:
        raise InvalidModelError(f"seed {seed} is not a 64-bit unsigned integer")
    return seed


def _frozen_array(values: object, name: str, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise InvalidModelError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidModelError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _cumulative_rows(probs: np.ndarray) -> Tuple[Tuple[Tuple[float, ...], int], ...]:
    """Index-ordered CDF of every row, with the last index of positive mass."""
    rows = []
    for row in probs.reshape(-1, probs.shape[-1]):
        positive = np.flatnonzero(row > 0)
        last = int(positive[-1]) if positive.size else len(row) - 1
        rows.append((tuple(np.cumsum(row).tolist()), last))
    return tuple(rows)


def _inverse_cdf(cdf: Tuple[float, ...], last: int, u: float) -> int:
    return min(bisect.bisect_right(cdf, u), last)


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """
    Finite MDP with a hard cap on episode length.

    Attributes:
        transition: (S, A, S) next-state probabilities.
        reward: (S, A, S) reward of each transition.
        terminal_states: Absorbing states; entering one ends the episode.
        start_distribution: Probability of each start state.
        horizon_cap: Maximum number of steps per episode.
    """

    transition: np.ndarray
    reward: np.ndarray
    terminal_states: FrozenSet[int]
    start_distribution: np.ndarray
    horizon_cap: int
    _transition_cdf: tuple = field(init=False, repr=False)
    _start_cdf: tuple = field(init=False, repr=False)
    _reward_table: list = field(init=False, repr=False)

    def __post_init__(self) -> None:
        transition = _frozen_array(self.transition, "transition", 3)
        reward = _frozen_array(self.reward, "reward", 3)
        start = _frozen_array(self.start_distribution, "start_distribution", 1)
        num_states, num_actions, num_next = transition.shape
        if num_states < 1 or num_actions < 1:
            raise InvalidModelError("an MDP needs at least one state and one action")
        if num_next != num_states:
            raise InvalidModelError(f"transition shape {transition.shape} is not (S, A, S)")
        if reward.shape != transition.shape:
            raise InvalidModelError(
                f"reward shape {reward.shape} does not match transition {transition.shape}"
            )
        if start.shape != (num_states,):
            raise InvalidModelError(f"start_distribution must have {num_states} entries")
        if np.any(transition < 0) or np.any(start < 0):
            raise InvalidModelError("probabilities must be nonnegative")
        row_sums = transition.sum(axis=2)
        bad = np.argwhere(np.abs(row_sums - 1.0) > ROW_TOLERANCE)
        if bad.size:
            s, a = (int(v) for v in bad[0])
            raise InvalidModelError(
                f"transition row ({s}, {a}) sums to {row_sums[s, a]!r}, not 1"
            )
        if abs(float(start.sum()) - 1.0) > ROW_TOLERANCE:
            raise InvalidModelError(f"start_distribution sums to {start.sum()!r}, not 1")

        terminals = frozenset(int(s) for s in self.terminal_states)
        if any(not 0 <= s < num_states for s in terminals):
            raise InvalidModelError("terminal state index out of range")
        if any(start[s] > 0 for s in terminals):
            raise InvalidModelError("start_distribution assigns mass to a terminal state")

        horizon = self.horizon_cap
        if isinstance(horizon, bool) or not isinstance(horizon, (int, np.integer)) or horizon < 1:
            raise InvalidModelError(f"horizon_cap must be a positive integer, got {horizon!r}")

        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "start_distribution", start)
        object.__setattr__(self, "terminal_states", terminals)
        object.__setattr__(self, "horizon_cap", int(horizon))
        object.__setattr__(self, "_transition_cdf", _cumulative_rows(transition))
        object.__setattr__(self, "_start_cdf", _cumulative_rows(start[np.newaxis, :])[0])
        object.__setattr__(self, "_reward_table", reward.tolist())

    @property
    def num_states(self) -> int:
        return int(self.transition.shape[0])

    @property
    def num_actions(self) -> int:
        return int(self.transition.shape[1])

    @property
    def non_terminal_states(self) -> Tuple[int, ...]:
        return tuple(s for s in range(self.num_states) if s not in self.terminal_states)

    def draw_start(self, u: float) -> int:
        """Inverse-CDF draw of a start state for a uniform variate u."""
        cdf, last = self._start_cdf
        return _inverse_cdf(cdf, last, u)

    def draw_next(self, state: int, action: int, u: float) -> int:
        """Inverse-CDF draw of the next state for a uniform variate u."""
        cdf, last = self._transition_cdf[state * self.num_actions + action]
        return _inverse_cdf(cdf, last, u)

    def transition_reward(self, state: int, action: int, next_state: int) -> float:
        return self._reward_table[state][action][next_state]

    def with_rewards(self, reward: np.ndarray) -> "TabularMdp":
        """Copy of this MDP with a different reward tensor."""
        return TabularMdp(
            transition=self.transition,
            reward=reward,
            terminal_states=self.terminal_states,
            start_distribution=self.start_distribution,
            horizon_cap=self.horizon_cap,
        )

    def with_horizon(self, horizon_cap: int) -> "TabularMdp":
        """Copy of this MDP with a different horizon cap."""
        return TabularMdp(
            transition=self.transition,
            reward=self.reward,
            terminal_states=self.terminal_states,
            start_distribution=self.start_distribution,
            horizon_cap=horizon_cap,
        )

    def check_batch(self, batch: Iterable["Trajectory"]) -> None:
        """
        Check that every logged step names a non-terminal state and a valid action.

        Raises:
            TrajectoryFormatError: On the first offending step.
        """
        for number, trajectory in enumerate(batch, start=1):
            for t, (state, action, _) in enumerate(trajectory.steps):
                if not 0 <= state < self.num_states:
                    raise TrajectoryFormatError(
                        f"trajectory {number} step {t}: state {state} outside "
                        f"0..{self.num_states - 1}"
                    )
                if not 0 <= action < self.num_actions:
                    raise TrajectoryFormatError(
                        f"trajectory {number} step {t}: action {action} outside "
                        f"0..{self.num_actions - 1}"
                    )
                if state in self.terminal_states:
                    raise TrajectoryFormatError(
                        f"trajectory {number} step {t}: acts in terminal state {state}"
                    )


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """
    Stochastic policy given as an (S, A) table of action probabilities.

    Construction checks shape and range; row normalisation is checked by
    validate() and, for the rows actually used, during sampling.
    """

    probs: np.ndarray
    _cdf: tuple = field(init=False, repr=False)

    def __post_init__(self) -> None:
        probs = _frozen_array(self.probs, "probs", 2)
        if probs.shape[0] < 1 or probs.shape[1] < 1:
            raise InvalidModelError("a policy needs at least one state and one action")
        if np.any(probs < 0) or np.any(probs > 1):
            raise InvalidModelError("policy probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cdf", _cumulative_rows(probs))

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @property
    def num_states(self) -> int:
        return int(self.probs.shape[0])

    @property
    def num_actions(self) -> int:
        return int(self.probs.shape[1])

    def validate(self) -> "TabularPolicy":
        """Check that every row sums to one; returns self for chaining."""
        for state in range(self.num_states):
            total = float(self.probs[state].sum())
            if abs(total - 1.0) > ROW_TOLERANCE:
                raise InvalidModelError(f"policy row {state} sums to {total!r}, not 1")
        return self

    def draw(self, state: int, u: float) -> int:
        """Inverse-CDF draw of an action in the given state."""
        cdf, last = self._cdf[state]
        if abs(cdf[-1] - 1.0) > ROW_TOLERANCE:
            raise DegeneratePolicyError(state, cdf[-1])
        return _inverse_cdf(cdf, last, u)

    def prob(self, state: int, action: int) -> float:
        return float(self.probs[state, action])


@dataclass(frozen=True)
class Trajectory:
    """One sampled episode of (state, action, reward) steps."""

    steps: Tuple[Step, ...]
    terminated: bool
    truncated: bool
    seed: int

    def __post_init__(self) -> None:
        steps = tuple((int(s), int(a), float(r)) for s, a, r in self.steps)
        if not steps:
            raise InvalidModelError("a trajectory needs at least one step")
        if self.terminated == self.truncated:
            raise InvalidModelError("exactly one of terminated/truncated must be set")
        object.__setattr__(self, "steps", steps)

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> Tuple[int, ...]:
        return tuple(s for s, _, _ in self.steps)

    @property
    def actions(self) -> Tuple[int, ...]:
        return tuple(a for _, a, _ in self.steps)

    @property
    def rewards(self) -> Tuple[float, ...]:
        return tuple(r for _, _, r in self.steps)

    @property
    def total_return(self) -> float:
        return float(sum(self.rewards))


@dataclass(frozen=True)
class TrajectoryBatch:
    """Trajectories sampled with consecutive seeds starting at base_seed."""

    trajectories: Tuple[Trajectory, ...]
    base_seed: int

    def __post_init__(self) -> None:
        trajectories = tuple(self.trajectories)
        if not trajectories:
            raise InvalidModelError("a batch needs at least one trajectory")
        object.__setattr__(self, "trajectories", trajectories)

    @property
    def n(self) -> int:
        return len(self.trajectories)

    @property
    def truncated_count(self) -> int:
        return sum(1 for t in self.trajectories if t.truncated)

    @property
    def max_length(self) -> int:
        return max(t.length for t in self.trajectories)

    def returns(self) -> np.ndarray:
        return np.array([t.total_return for t in self.trajectories], dtype=float)

    def split(self) -> Tuple["TrajectoryBatch", "TrajectoryBatch"]:
        """First and second half of the batch (the first half gets the odd one out)."""
        if self.n < 2:
            raise InvalidModelError("cannot split a batch of fewer than 2 trajectories")
        half = (self.n + 1) // 2
        first = TrajectoryBatch(self.trajectories[:half], self.base_seed)
        second = TrajectoryBatch(
            self.trajectories[half:], (self.base_seed + half) % SEED_MODULUS
        )
        return first, second

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def __len__(self) -> int:
        return self.n


def _check_compatible(mdp: TabularMdp, policy: TabularPolicy) -> None:
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise InvalidModelError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.num_states}, {mdp.num_actions})"
        )


def sample_trajectory(mdp: TabularMdp, policy: TabularPolicy, seed: int) -> Trajectory:
    """
    Sample one episode of `policy` in `mdp`.

    The generator is seeded with `seed` alone and yields one block of
    uniform variates: one for the start state, then one for the action and
    one for the next state per step. Draws use the inverse CDF over the
    index-ordered distribution, so the result depends only on the inputs.

    Raises:
        DegeneratePolicyError: If a visited state's policy row does not sum to 1.
    """
    seed = as_seed(seed)
    _check_compatible(mdp, policy)
    horizon = mdp.horizon_cap
    u = np.random.default_rng(seed).random(1 + 2 * horizon).tolist()

    state = mdp.draw_start(u[0])
    terminals = mdp.terminal_states
    steps: List[Step] = []
    for t in range(horizon):
        action = policy.draw(state, u[1 + 2 * t])
        next_state = mdp.draw_next(state, action, u[2 + 2 * t])
        steps.append((state, action, mdp.transition_reward(state, action, next_state)))
        if next_state in terminals:
            return Trajectory(tuple(steps), terminated=True, truncated=False, seed=seed)
        state = next_state
    return Trajectory(tuple(steps), terminated=False, truncated=True, seed=seed)


def sample_batch(
    mdp: TabularMdp, policy: TabularPolicy, n: int, base_seed: int
) -> TrajectoryBatch:
    """Sample n trajectories; trajectory i uses seed base_seed + i (mod 2**64)."""
    base_seed = as_seed(base_seed)
    if n < 1:
        raise InvalidModelError(f"batch size must be positive, got {n}")
    trajectories = tuple(
        sample_trajectory(mdp, policy, (base_seed + i) % SEED_MODULUS) for i in range(n)
    )
    batch = TrajectoryBatch(trajectories, base_seed)
    if batch.truncated_count:
        logger.warning(
            "%d of %d trajectories hit the horizon cap of %d",
            batch.truncated_count,
            n,
            mdp.horizon_cap,
        )
    return batch


def action_ratio(pi_e: TabularPolicy, pi_b: TabularPolicy, s: int, a: int) -> float:
    """
    Action probability ratio pi_e(a|s) / pi_b(a|s).

    Raises:
        SupportViolationError: If pi_b(a|s) is zero.
    """
    pb = pi_b.probs[s, a]
    if pb <= 0.0:
        raise SupportViolationError(s, a)
    return float(pi_e.probs[s, a] / pb)


def behaviour_support(pi_b: TabularPolicy, states: Optional[Iterable[int]] = None) -> float:
    """
    Smallest behaviour probability over the given states (all states by default).

    Any evaluation policy then has action ratios of at most 1 / support.
    """
    rows = pi_b.probs if states is None else pi_b.probs[sorted(set(states))]
    if rows.size == 0:
        return 1.0
    return float(rows.min())


def trajectory_to_json(trajectory: Trajectory) -> str:
    return json.dumps(
        {
            "seed": trajectory.seed,
            "terminated": trajectory.terminated,
            "steps": [[s, a, r] for s, a, r in trajectory.steps],
        }
    )


def trajectory_from_json(line: str) -> Trajectory:
    try:
        record = json.loads(line)
        steps = tuple((int(s), int(a), float(r)) for s, a, r in record["steps"])
        terminated = bool(record["terminated"])
        truncated = bool(record.get("truncated", not terminated))
        return Trajectory(steps, terminated, truncated, as_seed(record["seed"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise TrajectoryFormatError(f"malformed trajectory record: {exc}") from exc


def write_trajectories_jsonl(batch: TrajectoryBatch, out: Union[PathLike, IO[str]]) -> None:
    """Write one JSON object per trajectory."""
    lines = "".join(trajectory_to_json(t) + "\n" for t in batch)
    if isinstance(out, (str, Path)):
        Path(out).write_text(lines, encoding="utf-8")
    else:
        out.write(lines)


def read_trajectories_jsonl(source: Union[PathLike, IO[str]]) -> TrajectoryBatch:
    """Read a trajectory log; the batch's base seed is the first record's seed."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    trajectories = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            trajectories.append(trajectory_from_json(line))
        except TrajectoryFormatError as exc:
            raise TrajectoryFormatError(f"line {number}: {exc}") from exc
    if not trajectories:
        raise TrajectoryFormatError("trajectory log is empty")
    return TrajectoryBatch(tuple(trajectories), trajectories[0].seed)


def mdp_to_json(mdp: TabularMdp) -> str:
    """Serialise an MDP with explicit tensors for third-party checking."""
    return json.dumps(
        {
            "num_states": mdp.num_states,
            "num_actions": mdp.num_actions,
            "transition": mdp.transition.tolist(),
            "reward": mdp.reward.tolist(),
            "terminal_states": sorted(mdp.terminal_states),
            "start_distribution": mdp.start_distribution.tolist(),
            "horizon_cap": mdp.horizon_cap,
        },
        indent=2,
    )


def mdp_from_json(text: str) -> TabularMdp:
    try:
        data = json.loads(text)
        mdp = TabularMdp(
            transition=np.array(data["transition"], dtype=float),
            reward=np.array(data["reward"], dtype=float),
            terminal_states=frozenset(data["terminal_states"]),
            start_distribution=np.array(data["start_distribution"], dtype=float),
            horizon_cap=data["horizon_cap"],
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise TrajectoryFormatError(f"malformed MDP document: {exc}") from exc
    if (mdp.num_states, mdp.num_actions) != (data["num_states"], data["num_actions"]):
        raise TrajectoryFormatError("declared sizes do not match the tensors")
    return mdp

