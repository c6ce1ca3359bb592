"""
Exact ground truth for small tabular problems.

Backward induction gives the true expected return of a policy; depth-first
enumeration of every behaviour trajectory gives exact moments of the
importance sampling estimators.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import BudgetExceededError, InvalidModelError
from .estimators import max_action_ratio, popoviciu_bound, ratio_matrix
from .lift import DomainBundle, LiftDomainSpec, build_lift_domain
from .mdp import TabularMdp, TabularPolicy

logger = logging.getLogger(__name__)

DEFAULT_NODE_BUDGET = 10**7


@dataclass(frozen=True)
class TruthReport:
    """True expected return of a policy under the MDP's horizon cap."""

    true_return: float
    horizon_used: int
    truncation_mass: float


def true_return_dp(mdp: TabularMdp, policy: TabularPolicy) -> TruthReport:
    """
    Expected undiscounted return by backward induction over the horizon.

    Terminal states absorb with value zero. truncation_mass is the
    probability of still being in a non-terminal state after horizon_cap steps.
    """
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise InvalidModelError("policy shape does not match the MDP")
    transition, probs = mdp.transition, policy.probs
    continuing = np.ones(mdp.num_states)
    continuing[sorted(mdp.terminal_states)] = 0.0
    expected_reward = (transition * mdp.reward).sum(axis=2)

    value = np.zeros(mdp.num_states)
    for _ in range(mdp.horizon_cap):
        q = expected_reward + transition @ (continuing * value)
        value = (probs * q).sum(axis=1) * continuing

    occupancy = mdp.start_distribution.copy()
    state_transition = np.einsum("sa,sat->st", probs, transition)
    for _ in range(mdp.horizon_cap):
        occupancy = (occupancy @ state_transition) * continuing

    report = TruthReport(
        true_return=float(mdp.start_distribution @ value),
        horizon_used=mdp.horizon_cap,
        truncation_mass=float(min(1.0, max(0.0, occupancy.sum()))),
    )
    logger.debug(
        "dp truth %.10g (truncation mass %.3g)", report.true_return, report.truncation_mass
    )
    return report


@dataclass(frozen=True)
class ExactMoments:
    """
    Exact expectations under the behaviour policy for one dropped set.

    A is the product of ratios in dropped states, B over the other states,
    G the return. The *_single variances are those of one trajectory's
    contribution; mse_sis_single is the MSE of a one-trajectory SIS estimate
    and exact_mse_sis(n) that of an n-trajectory one.
    """

    e_a: float
    e_bg: float
    e_abg: float
    cov_a_bg: float
    var_sis_single: float
    mse_sis_single: float
    e_is: float
    e_pdis: float
    var_is_single: float
    leaf_mass: float
    leaf_count: int
    max_retained_visits: int
    truncated_mass: float
    horizon: int
    dropped_set: FrozenSet[int] = field(default_factory=frozenset)

    def exact_mse_sis(self, n: int) -> float:
        return exact_estimator_stats(self, n).mse


class ExactStats(NamedTuple):
    bias: float
    variance: float
    mse: float


class _Accumulator:
    """Running probability-weighted sums, added in enumeration order."""

    def __init__(self) -> None:
        self.mass = 0.0
        self.a = 0.0
        self.bg = 0.0
        self.abg = 0.0
        self.bg_sq = 0.0
        self.is_sq = 0.0
        self.pdis = 0.0
        self.truncated = 0.0
        self.leaves = 0
        self.max_retained = 0

    def add(
        self,
        prob: float,
        a: float,
        b: float,
        g: float,
        pdis: float,
        retained: int,
        truncated: bool,
    ) -> None:
        bg = b * g
        self.mass += prob
        self.a += prob * a
        self.bg += prob * bg
        self.abg += prob * a * bg
        self.bg_sq += prob * bg * bg
        self.is_sq += prob * (a * bg) ** 2
        self.pdis += prob * pdis
        if truncated:
            self.truncated += prob
        self.leaves += 1
        self.max_retained = max(self.max_retained, retained)


def count_leaves(mdp: TabularMdp, pi_b: TabularPolicy, max_len: int) -> int:
    """
    Exact number of leaves in the behaviour enumeration tree.

    Zero-probability branches are pruned, as in enumerate_moments.
    """
    terminals = mdp.terminal_states
    supported = pi_b.probs > 0
    # leaves[s] = leaves below a non-terminal state with `remaining` steps to go
    leaves = [0] * mdp.num_states
    for remaining in range(1, max_len + 1):
        updated = [0] * mdp.num_states
        for s in mdp.non_terminal_states:
            total = 0
            for a in range(mdp.num_actions):
                if not supported[s, a]:
                    continue
                for s_next in np.flatnonzero(mdp.transition[s, a] > 0):
                    s_next = int(s_next)
                    if s_next in terminals or remaining == 1:
                        total += 1
                    else:
                        total += leaves[s_next]
            updated[s] = total
        leaves = updated
    return sum(leaves[s] for s in np.flatnonzero(mdp.start_distribution > 0))


def enumerate_moments(
    mdp: TabularMdp,
    pi_b: TabularPolicy,
    pi_e: TabularPolicy,
    dropped: Iterable[int],
    max_len: Optional[int] = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> ExactMoments:
    """
    Exact moments of A, BG and the IS/PDIS contributions by full enumeration.

    Every (action, next state) branch with positive probability under pi_b is
    followed until a terminal state is entered or max_len steps are taken
    (defaults to the MDP's horizon cap). Truncated leaves keep their
    accumulated values and probability mass.

    Raises:
        BudgetExceededError: If the tree has more leaves than node_budget;
            nothing is enumerated in that case.
    """
    horizon = mdp.horizon_cap if max_len is None else int(max_len)
    if horizon < 1:
        raise InvalidModelError("max_len must be positive")
    leaves = count_leaves(mdp, pi_b, horizon)
    if leaves > node_budget:
        raise BudgetExceededError(leaves, node_budget)
    logger.debug("enumerating %d leaves to depth %d", leaves, horizon)

    dropped_set = frozenset(int(s) for s in dropped)
    ratios = ratio_matrix(pi_e, pi_b)
    terminals = mdp.terminal_states
    behaviour = pi_b.probs.tolist()
    transition_support: Dict[Tuple[int, int], List[Tuple[int, float, float]]] = {}
    for s in mdp.non_terminal_states:
        for a in range(mdp.num_actions):
            transition_support[(s, a)] = [
                (int(s_next), float(mdp.transition[s, a, s_next]), float(mdp.reward[s, a, s_next]))
                for s_next in np.flatnonzero(mdp.transition[s, a] > 0)
            ]
    acc = _Accumulator()

    def visit(
        state: int, depth: int, prob: float, a_w: float, b_w: float,
        g: float, full_w: float, pdis: float, retained: int,
    ) -> None:
        is_dropped = state in dropped_set
        for action in range(mdp.num_actions):
            pb = behaviour[state][action]
            if pb <= 0.0:
                continue
            rho = float(ratios[state, action])
            next_a = a_w * rho if is_dropped else a_w
            next_b = b_w if is_dropped else b_w * rho
            next_full = full_w * rho
            next_retained = retained if is_dropped else retained + 1
            for s_next, p_next, reward in transition_support[(state, action)]:
                branch_prob = prob * pb * p_next
                branch_g = g + reward
                branch_pdis = pdis + next_full * reward
                if s_next in terminals or depth + 1 == horizon:
                    acc.add(
                        branch_prob, next_a, next_b, branch_g, branch_pdis,
                        next_retained, truncated=s_next not in terminals,
                    )
                else:
                    visit(
                        s_next, depth + 1, branch_prob, next_a, next_b,
                        branch_g, next_full, branch_pdis, next_retained,
                    )

    for start in np.flatnonzero(mdp.start_distribution > 0):
        visit(int(start), 0, float(mdp.start_distribution[start]), 1.0, 1.0, 0.0, 1.0, 0.0, 0)

    cov = acc.abg - acc.a * acc.bg
    var_sis = max(0.0, acc.bg_sq - acc.bg**2)
    return ExactMoments(
        e_a=acc.a,
        e_bg=acc.bg,
        e_abg=acc.abg,
        cov_a_bg=cov,
        var_sis_single=var_sis,
        mse_sis_single=var_sis + (acc.bg - acc.abg) ** 2,
        e_is=acc.abg,
        e_pdis=acc.pdis,
        var_is_single=max(0.0, acc.is_sq - acc.abg**2),
        leaf_mass=acc.mass,
        leaf_count=acc.leaves,
        max_retained_visits=acc.max_retained,
        truncated_mass=acc.truncated,
        horizon=horizon,
        dropped_set=dropped_set,
    )


def exact_estimator_stats(moments: ExactMoments, n: int) -> ExactStats:
    """
    Exact bias, variance and MSE of the n-trajectory SIS estimator.

    The target is E[ABG]; the bias E[BG] - E[ABG] equals -Cov(A, BG) when E[A] = 1.
    """
    if n < 1:
        raise InvalidModelError(f"n must be positive, got {n}")
    bias = moments.e_bg - moments.e_abg
    variance = moments.var_sis_single / n
    return ExactStats(bias=bias, variance=variance, mse=variance + bias**2)


@dataclass(frozen=True)
class NoiseScan:
    """True returns of the stochastic lift domain over a grid of noise levels."""

    bound: int
    grid: Tuple[Tuple[float, float], ...]
    crossings: Dict[float, Tuple[Tuple[float, float], ...]]
    tolerance: float

    def matches(self, target: float) -> Tuple[Tuple[float, float], ...]:
        """(delta, true_return) pairs within tolerance of the target."""
        found = [p for p in self.grid if abs(p[1] - target) <= self.tolerance]
        crossings = self.crossings.get(target, ())
        found.extend(p for p in crossings if abs(p[1] - target) <= self.tolerance)
        return tuple(sorted(set(found)))


def _stochastic_truth(bound: int, delta: float, horizon_cap: int) -> float:
    bundle = build_lift_domain(LiftDomainSpec(bound=bound, noise=delta, horizon_cap=horizon_cap))
    return true_return_dp(bundle.mdp, bundle.eval_policy).true_return


def scan_noise(
    bound: int,
    targets: Sequence[float],
    grid: Optional[Sequence[float]] = None,
    tolerance: float = 1e-3,
    horizon_cap: int = 100,
    refine_steps: int = 50,
) -> NoiseScan:
    """
    Locate noise levels whose true return matches reported values.

    The true return is computed on the grid (default 0, 0.005, ..., 0.495);
    wherever it brackets a target between neighbouring grid points the
    crossing is refined by bisection. Nothing is assumed about which
    crossing, if any, was intended.
    """
    if grid is None:
        grid = [round(0.005 * i, 3) for i in range(100)]
    values = [(float(d), _stochastic_truth(bound, float(d), horizon_cap)) for d in grid]
    crossings: Dict[float, Tuple[Tuple[float, float], ...]] = {}
    for target in targets:
        found = []
        for (d_lo, g_lo), (d_hi, g_hi) in zip(values, values[1:]):
            if (g_lo - target) * (g_hi - target) > 0:
                continue
            lo, hi, f_lo = d_lo, d_hi, g_lo - target
            for _ in range(refine_steps):
                mid = 0.5 * (lo + hi)
                f_mid = _stochastic_truth(bound, mid, horizon_cap) - target
                if f_lo * f_mid <= 0:
                    hi = mid
                else:
                    lo, f_lo = mid, f_mid
            delta = 0.5 * (lo + hi)
            found.append((delta, _stochastic_truth(bound, delta, horizon_cap)))
        crossings[target] = tuple(found)
        logger.info("bound %d target %g: %d crossing(s)", bound, target, len(found))
    return NoiseScan(bound=bound, grid=tuple(values), crossings=crossings, tolerance=tolerance)


class OracleCheck(NamedTuple):
    name: str
    value: float
    expected: float
    tolerance: float
    passed: bool


def _check(name: str, value: float, expected: float, tolerance: float) -> OracleCheck:
    return OracleCheck(name, value, expected, tolerance, abs(value - expected) <= tolerance)


def run_checks(
    bundle: DomainBundle,
    max_len: int,
    dropped: Optional[Iterable[int]] = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> Tuple[ExactMoments, List[OracleCheck]]:
    """
    Enumeration checks of the estimators on a lift domain truncated at max_len steps.

    The dropped set defaults to the bundle's lift states. IS and PDIS must
    be unbiased for the truncated truth, E[A] must be one, and the exact
    single-trajectory SIS variance must respect the worst-case bound. When
    only lift states are dropped SIS must be unbiased as well.
    """
    mdp = bundle.mdp.with_horizon(max_len)
    pi_e, pi_b = bundle.eval_policy, bundle.behaviour_policy
    dropped_set = bundle.lift_states if dropped is None else frozenset(dropped)
    truth = true_return_dp(mdp, pi_e).true_return
    moments = enumerate_moments(mdp, pi_b, pi_e, dropped_set, node_budget=node_budget)

    retained = [s for s in mdp.non_terminal_states if s not in dropped_set]
    bound = popoviciu_bound(
        max_len, bundle.r_max, max_action_ratio(pi_e, pi_b, retained), moments.max_retained_visits
    )
    checks = [
        _check("is_unbiased", moments.e_is, truth, 1e-9),
        _check("pdis_unbiased", moments.e_pdis, truth, 1e-9),
        _check("leaf_mass", moments.leaf_mass, 1.0, 1e-12),
        _check("mean_dropped_weight", moments.e_a, 1.0, 1e-12),
        _check(
            "decomposition",
            moments.e_abg,
            moments.e_a * moments.e_bg + moments.cov_a_bg,
            1e-12,
        ),
        OracleCheck(
            "variance_bound", moments.var_sis_single, bound, 0.0, moments.var_sis_single <= bound
        ),
    ]
    if dropped_set <= bundle.lift_states:
        checks.append(_check("sis_unbiased", moments.e_bg, truth, 1e-9))
    for check in checks:
        logger.info(
            "%s: %.12g vs %.12g (%s)",
            check.name, check.value, check.expected, "ok" if check.passed else "FAILED",
        )
    return moments, checks
