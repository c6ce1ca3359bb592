"""
Importance sampling estimators of the return of an evaluation policy.

IS, PDIS and INCRIS weight rewards by products of action probability
ratios over time. SIS weights the whole return by the ratios of the
retained states only, dropping the ratios of a given state set every time
one of its states is visited.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, NamedTuple, Tuple

import numpy as np

from .errors import (
    InsufficientSampleError,
    InvalidModelError,
    SupportViolationError,
    TrajectoryFormatError,
)
from .mdp import TabularPolicy, TrajectoryBatch
from .stats import SampleStatistics

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12


def ratio_matrix(pi_e: TabularPolicy, pi_b: TabularPolicy) -> np.ndarray:
    """(S, A) table of pi_e / pi_b, NaN where pi_b has no support."""
    if pi_e.probs.shape != pi_b.probs.shape:
        raise InvalidModelError(
            f"policy shapes differ: {pi_e.probs.shape} vs {pi_b.probs.shape}"
        )
    ratios = np.full(pi_b.probs.shape, np.nan)
    np.divide(pi_e.probs, pi_b.probs, out=ratios, where=pi_b.probs > 0)
    return ratios


@dataclass(frozen=True, eq=False)
class StateRatioTable:
    """
    Per-trajectory ratio bookkeeping for one batch and policy pair.

    Attributes:
        state_products: (n, S) product of the ratios taken in each state.
        visit_counts: (n, S) number of visits to each state.
        returns: (n,) undiscounted return of each trajectory.
        step_ratios: (n, L) ratio per time step, padded with 1.
        step_rewards: (n, L) reward per time step, padded with 0.
    """

    state_products: np.ndarray
    visit_counts: np.ndarray
    returns: np.ndarray
    step_ratios: np.ndarray
    step_rewards: np.ndarray
    truncated: int = 0

    @classmethod
    def build(
        cls, batch: TrajectoryBatch, pi_e: TabularPolicy, pi_b: TabularPolicy
    ) -> "StateRatioTable":
        """
        Tabulate the ratios of every sampled (state, action) pair.

        Raises:
            SupportViolationError: On the first sampled pair with pi_b(a|s) = 0.
            TrajectoryFormatError: If a step names a state or action outside the tables.
        """
        ratios = ratio_matrix(pi_e, pi_b)
        num_states = ratios.shape[0]
        n, horizon = batch.n, batch.max_length
        state_products = np.ones((n, num_states))
        visit_counts = np.zeros((n, num_states), dtype=np.int64)
        step_ratios = np.ones((n, horizon))
        step_rewards = np.zeros((n, horizon))
        returns = np.empty(n)

        for i, trajectory in enumerate(batch):
            for t, (state, action, reward) in enumerate(trajectory.steps):
                if not (0 <= state < num_states and 0 <= action < ratios.shape[1]):
                    raise TrajectoryFormatError(
                        f"trajectory {i} step {t}: ({state}, {action}) is outside the "
                        f"policy tables"
                    )
                rho = ratios[state, action]
                if np.isnan(rho):
                    raise SupportViolationError(state, action)
                state_products[i, state] *= rho
                visit_counts[i, state] += 1
                step_ratios[i, t] = rho
                step_rewards[i, t] = reward
            returns[i] = trajectory.total_return

        return cls(
            state_products=state_products,
            visit_counts=visit_counts,
            returns=returns,
            step_ratios=step_ratios,
            step_rewards=step_rewards,
            truncated=batch.truncated_count,
        )

    @property
    def n(self) -> int:
        return int(self.returns.shape[0])

    @property
    def num_states(self) -> int:
        return int(self.state_products.shape[1])

    def product_over(self, states: Iterable[int]) -> np.ndarray:
        """
        Per-trajectory product of the ratios taken in `states`.

        Columns are multiplied one at a time in index order, so a state that
        was never visited (a column of ones) leaves the result bit-identical.
        """
        weights = np.ones(self.n)
        for state in sorted(states):
            weights = weights * self.state_products[:, state]
        return weights

    def decompose(self, dropped: Iterable[int]) -> "WeightDecomposition":
        dropped_set = _state_set(dropped, self.num_states)
        retained = [s for s in range(self.num_states) if s not in dropped_set]
        return WeightDecomposition(
            a_weight=self.product_over(dropped_set),
            b_weight=self.product_over(retained),
            g=self.returns,
            dropped_set=dropped_set,
            visit_counts=self.visit_counts,
        )


def _state_set(states: Iterable[int], num_states: int) -> FrozenSet[int]:
    result = frozenset(int(s) for s in states)
    if any(not 0 <= s < num_states for s in result):
        raise InvalidModelError(
            f"state set {sorted(result)} has indices outside 0..{num_states - 1}"
        )
    return result


@dataclass(frozen=True, eq=False)
class WeightDecomposition:
    """
    Split of every trajectory's importance weight into dropped and retained parts.

    a_weight is the product of ratios in the dropped set S^A, b_weight the
    product over all other states, and g the return.
    """

    a_weight: np.ndarray
    b_weight: np.ndarray
    g: np.ndarray
    dropped_set: FrozenSet[int]
    visit_counts: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.g.shape[0])

    @property
    def bg(self) -> np.ndarray:
        return self.b_weight * self.g

    def triples(self) -> Tuple[Tuple[float, float, float], ...]:
        return tuple(zip(self.a_weight.tolist(), self.b_weight.tolist(), self.g.tolist()))

    def retained_visits(self, retained_states: Iterable[int]) -> np.ndarray:
        """Per-trajectory number of visits to the given states."""
        columns = sorted(set(retained_states))
        if not columns:
            return np.zeros(self.n, dtype=np.int64)
        return self.visit_counts[:, columns].sum(axis=1)


@dataclass(frozen=True, eq=False)
class EstimateReport:
    """Output of one estimator on one batch."""

    estimator_name: str
    estimate: float
    per_trajectory_contributions: np.ndarray
    estimator_variance_hat: float
    extra: Dict[str, Any] = field(default_factory=dict)
    truncated: int = 0

    @property
    def n(self) -> int:
        return int(self.per_trajectory_contributions.shape[0])

    @property
    def std_error(self) -> float:
        return float(np.sqrt(self.estimator_variance_hat))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimator_name": self.estimator_name,
            "estimate": self.estimate,
            "variance_hat": self.estimator_variance_hat,
            "n": self.n,
            "truncated": self.truncated,
            "extra": self.extra,
        }


@dataclass(frozen=True)
class BoundReport:
    """Worst-case variance bound of a SIS estimator for a retained state set."""

    rho_max: float
    m_b: int
    r_max: float
    h: int
    bound: float
    heuristic: bool = False


class MseEstimate(NamedTuple):
    var_hat: float
    cov_hat: float
    mse_hat: float


def _report(
    name: str,
    contributions: np.ndarray,
    truncated: int,
    extra: Dict[str, Any],
) -> EstimateReport:
    n = contributions.shape[0]
    # A single trajectory has no sample variance; report zero rather than fail.
    variance_hat = SampleStatistics.variance_of_mean(contributions) if n >= 2 else 0.0
    if truncated:
        logger.warning("%s: %d of %d trajectories were truncated", name, truncated, n)
    return EstimateReport(
        estimator_name=name,
        estimate=float(np.mean(contributions)),
        per_trajectory_contributions=contributions,
        estimator_variance_hat=float(variance_hat),
        extra=extra,
        truncated=truncated,
    )


def decompose_weights(
    batch: TrajectoryBatch,
    pi_e: TabularPolicy,
    pi_b: TabularPolicy,
    dropped: Iterable[int],
) -> WeightDecomposition:
    """A, B and G for every trajectory given the dropped state set."""
    return StateRatioTable.build(batch, pi_e, pi_b).decompose(dropped)


def estimate_sis(
    batch: TrajectoryBatch,
    pi_e: TabularPolicy,
    pi_b: TabularPolicy,
    dropped: Iterable[int],
) -> EstimateReport:
    """State-based importance sampling: mean of B * G for the dropped set."""
    table = StateRatioTable.build(batch, pi_e, pi_b)
    return sis_from_table(table, dropped)


def sis_from_table(
    table: StateRatioTable, dropped: Iterable[int], name: str = "sis"
) -> EstimateReport:
    decomp = table.decompose(dropped)
    return _report(
        name,
        decomp.bg,
        table.truncated,
        {"dropped": sorted(decomp.dropped_set)},
    )


def estimate_is(
    batch: TrajectoryBatch, pi_e: TabularPolicy, pi_b: TabularPolicy
) -> EstimateReport:
    """Ordinary importance sampling: mean of G times the full weight."""
    table = StateRatioTable.build(batch, pi_e, pi_b)
    return sis_from_table(table, (), name="is")


def estimate_pdis(
    batch: TrajectoryBatch, pi_e: TabularPolicy, pi_b: TabularPolicy
) -> EstimateReport:
    """Per-decision importance sampling: each reward weighted by the ratios up to its step."""
    table = StateRatioTable.build(batch, pi_e, pi_b)
    cumulative = np.cumprod(table.step_ratios, axis=1)
    contributions = (cumulative * table.step_rewards).sum(axis=1)
    return _report("pdis", contributions, table.truncated, {})


def estimate_incris(
    batch: TrajectoryBatch, pi_e: TabularPolicy, pi_b: TabularPolicy
) -> EstimateReport:
    """
    Incremental importance sampling.

    For each time step t, the reward is weighted by only the k most recent
    ratios, where k in 0..t minimises the estimated variance of the mean
    plus the squared covariance between the dropped older ratios and the
    weighted reward. Ties within floating tolerance go to the larger k.
    """
    table = StateRatioTable.build(batch, pi_e, pi_b)
    ratios, rewards = table.step_ratios, table.step_rewards
    n, horizon = ratios.shape
    prefix = np.cumprod(ratios, axis=1)
    contributions = np.zeros(n)
    chosen = []

    for t in range(1, horizon + 1):
        reward_t = rewards[:, t - 1]
        # recent[:, k] = product of the k most recent ratios up to step t
        recent = np.ones((n, t + 1))
        recent[:, 1:] = np.cumprod(ratios[:, t - 1 :: -1][:, :t], axis=1)
        # older[:, k] = product of ratios 1..t-k
        older = np.ones((n, t + 1))
        older[:, :t] = prefix[:, t - 1 :: -1][:, :t]
        terms = recent * reward_t[:, np.newaxis]

        if n < 2:
            k_star = t
        else:
            var_hat = SampleStatistics.column_variances(terms) / n
            cov_hat = SampleStatistics.column_covariances(older, terms)
            mse_hat = var_hat + cov_hat**2
            scale = max(1.0, float(np.max(np.mean(terms**2, axis=0))))
            ties = np.flatnonzero(mse_hat <= mse_hat.min() + TIE_TOLERANCE * scale)
            k_star = int(ties[-1])
        chosen.append(k_star)
        contributions += terms[:, k_star]

    logger.debug("incris recent-ratio counts per step: %s", chosen)
    return _report("incris", contributions, table.truncated, {"k_per_step": chosen})


def empirical_mse_hat(decomp: WeightDecomposition, n: int) -> MseEstimate:
    """
    Estimated MSE of the SIS estimator: Var-hat of the mean of BG plus Cov-hat(A, BG)^2.

    Raises:
        InsufficientSampleError: With fewer than two trajectories.
    """
    if n != decomp.n:
        raise InvalidModelError(f"n={n} does not match the decomposition size {decomp.n}")
    if n < 2:
        raise InsufficientSampleError(f"MSE estimate needs at least 2 trajectories, got {n}")
    bg = decomp.bg
    cov_hat = SampleStatistics.sample_covariance(decomp.a_weight, bg)
    var_hat = SampleStatistics.sample_variance(bg) / n
    return MseEstimate(var_hat=var_hat, cov_hat=cov_hat, mse_hat=var_hat + cov_hat**2)


def max_action_ratio(
    pi_e: TabularPolicy, pi_b: TabularPolicy, states: Iterable[int]
) -> float:
    """
    Largest pi_e / pi_b over the given states and all actions.

    Returns 1.0 for an empty state set.

    Raises:
        SupportViolationError: If pi_b leaves an action unsupported in one of the states.
    """
    ratios = ratio_matrix(pi_e, pi_b)
    rho_max = None
    for state in sorted(set(states)):
        for action in range(ratios.shape[1]):
            if np.isnan(ratios[state, action]):
                raise SupportViolationError(
                    state,
                    action,
                    f"retained state {state} lacks behaviour support for action {action}",
                )
        row_max = float(ratios[state].max())
        rho_max = row_max if rho_max is None else max(rho_max, row_max)
    return 1.0 if rho_max is None else rho_max


def popoviciu_bound(h: int, r_max: float, rho_max: float, m_b: int) -> float:
    """(h * r_max * rho_max^m_b)^2 / 4."""
    return (h * r_max * rho_max**m_b) ** 2 / 4.0


def variance_upper_bound(
    decomp: WeightDecomposition,
    pi_e: TabularPolicy,
    pi_b: TabularPolicy,
    r_max: float,
    h: int,
    retained_states: Iterable[int],
    heuristic: bool = False,
) -> BoundReport:
    """
    Variance bound of the SIS estimator for the retained states.

    M_B is the largest number of retained-state visits in any trajectory of
    the decomposition. Set `heuristic` when r_max is a maximum absolute
    reward rather than the upper end of a nonnegative reward range.
    """
    if r_max < 0 or h < 1:
        raise InvalidModelError("r_max must be nonnegative and h positive")
    retained = sorted(set(retained_states))
    rho_max = max_action_ratio(pi_e, pi_b, retained)
    m_b = int(decomp.retained_visits(retained).max()) if decomp.n else 0
    bound = popoviciu_bound(h, r_max, rho_max, m_b)
    if heuristic:
        logger.warning(
            "variance bound uses r_max=%g as a maximum absolute reward; "
            "rewards are not in [0, r_max]",
            r_max,
        )
    return BoundReport(
        rho_max=rho_max, m_b=m_b, r_max=float(r_max), h=int(h), bound=bound, heuristic=heuristic
    )


def negligible_mse_bound(report: BoundReport, epsilon: float) -> float:
    """MSE bound of SIS for an epsilon-negligible set: variance bound plus epsilon^2."""
    return report.bound + epsilon**2


Estimator = Callable[[TrajectoryBatch, TabularPolicy, TabularPolicy], EstimateReport]

ESTIMATORS: Dict[str, Estimator] = {
    "is": estimate_is,
    "pdis": estimate_pdis,
    "incris": estimate_incris,
}
