"""
Exhaustive covariance-testing search for a negligible dropped-state set.

Every candidate set up to a maximum cardinality is scored by its estimated
MSE; a set may replace the current best only if its dropped-weight product
has sample mean within epsilon of 1 and covariance with the retained
weighted return within epsilon of 0.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, IO, Iterable, List, Optional, Tuple, Union

import pandas as pd

from .errors import InsufficientSampleError, InvalidModelError
from .estimators import EstimateReport, StateRatioTable, empirical_mse_hat, sis_from_table
from .mdp import TabularMdp, TabularPolicy, TrajectoryBatch
from .stats import SampleStatistics

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.01
DEFAULT_MAX_CARDINALITY = 2
DIAGNOSTIC_COLUMNS = ["set", "mean_a", "cov_hat", "mse_hat", "eligible"]


def format_state_set(states: Iterable[int]) -> str:
    """Render a state set as {i;j} with sorted indices."""
    return "{" + ";".join(str(s) for s in sorted(states)) + "}"


@dataclass(frozen=True)
class SearchConfig:
    """
    Settings of the negligible-set search.

    Attributes:
        epsilon: Negligibility tolerance, also the relative MSE slack that
            lets a larger set replace a smaller one.
        max_cardinality: Largest candidate set size.
        candidate_states: States the candidate sets are drawn from.
    """

    candidate_states: FrozenSet[int]
    epsilon: float = DEFAULT_EPSILON
    max_cardinality: int = DEFAULT_MAX_CARDINALITY

    def __post_init__(self) -> None:
        states = frozenset(int(s) for s in self.candidate_states)
        object.__setattr__(self, "candidate_states", states)
        if not self.epsilon > 0:
            raise InvalidModelError(f"epsilon must be positive, got {self.epsilon!r}")
        if self.max_cardinality < 0:
            raise InvalidModelError("max_cardinality must be nonnegative")
        if self.max_cardinality > len(self.candidate_states):
            raise InvalidModelError(
                f"max_cardinality {self.max_cardinality} exceeds the "
                f"{len(self.candidate_states)} candidate states"
            )

    @classmethod
    def for_mdp(
        cls,
        mdp: TabularMdp,
        epsilon: float = DEFAULT_EPSILON,
        max_cardinality: int = DEFAULT_MAX_CARDINALITY,
    ) -> "SearchConfig":
        """Search over all non-terminal states of the MDP."""
        candidates = frozenset(mdp.non_terminal_states)
        return cls(
            candidate_states=candidates,
            epsilon=epsilon,
            max_cardinality=min(max_cardinality, len(candidates)),
        )


@dataclass(frozen=True)
class CandidateDiagnostics:
    """Covariance-test statistics of one candidate dropped set."""

    states: Tuple[int, ...]
    mean_a: float
    cov_hat: float
    var_hat: float
    mse_hat: float
    eligible: bool

    @property
    def cardinality(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class SearchResult:
    """Best negligible set found, its SIS estimate and all candidate diagnostics."""

    best_set: FrozenSet[int]
    best_mse_hat: float
    diagnostics: Tuple[CandidateDiagnostics, ...]
    estimate: float
    report: EstimateReport
    split: bool = False

    def eligible_candidates(self) -> List[CandidateDiagnostics]:
        return [d for d in self.diagnostics if d.eligible]


def _diagnose(
    table: StateRatioTable, states: Tuple[int, ...], epsilon: float
) -> CandidateDiagnostics:
    decomp = table.decompose(states)
    mse = empirical_mse_hat(decomp, table.n)
    mean_a = SampleStatistics.mean(decomp.a_weight)
    eligible = abs(mean_a - 1.0) < epsilon and abs(mse.cov_hat) < epsilon
    return CandidateDiagnostics(
        states=states,
        mean_a=mean_a,
        cov_hat=mse.cov_hat,
        var_hat=mse.var_hat,
        mse_hat=mse.mse_hat,
        eligible=eligible,
    )


def _candidate_sets(config: SearchConfig) -> List[Tuple[int, ...]]:
    ordered = sorted(config.candidate_states)
    sets: List[Tuple[int, ...]] = []
    for size in range(1, config.max_cardinality + 1):
        sets.extend(itertools.combinations(ordered, size))
    return sets


def search_negligible_set(
    batch: TrajectoryBatch,
    pi_e: TabularPolicy,
    pi_b: TabularPolicy,
    config: SearchConfig,
    split_batch: bool = False,
    workers: int = 1,
) -> SearchResult:
    """
    Find the dropped state set with the lowest estimated MSE among eligible sets.

    The empty set (plain IS) starts as the best set. Candidates are visited
    by cardinality and then lexicographically; an eligible candidate
    replaces the best when its MSE estimate is lower, or when it is below
    the best's estimate times (1 + epsilon) and has more states.

    Args:
        batch: Behaviour-policy trajectories.
        pi_e: Evaluation policy.
        pi_b: Behaviour policy.
        config: Search settings.
        split_batch: Search on the first half of the batch and estimate on
            the second half instead of reusing one batch for both.
        workers: Threads used to evaluate candidates; the result does not
            depend on it.
    """
    if split_batch:
        search_half, estimate_half = batch.split()
    else:
        search_half = estimate_half = batch
    if search_half.n < 2:
        raise InsufficientSampleError(
            f"search needs at least 2 trajectories, got {search_half.n}"
        )

    table = StateRatioTable.build(search_half, pi_e, pi_b)
    candidates = [()] + _candidate_sets(config)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            diagnostics = list(pool.map(lambda s: _diagnose(table, s, config.epsilon), candidates))
    else:
        diagnostics = [_diagnose(table, s, config.epsilon) for s in candidates]

    best = diagnostics[0]
    for candidate in diagnostics[1:]:
        logger.debug(
            "candidate %s: mean_a=%.6g cov_hat=%.6g mse_hat=%.6g eligible=%s",
            format_state_set(candidate.states),
            candidate.mean_a,
            candidate.cov_hat,
            candidate.mse_hat,
            candidate.eligible,
        )
        if not candidate.eligible:
            continue
        if candidate.mse_hat < best.mse_hat or (
            candidate.mse_hat < best.mse_hat * (1.0 + config.epsilon)
            and candidate.cardinality > best.cardinality
        ):
            best = candidate

    estimate_table = table if estimate_half is search_half else StateRatioTable.build(
        estimate_half, pi_e, pi_b
    )
    report = sis_from_table(estimate_table, best.states, name="sis_search")
    logger.info(
        "negligible-set search chose %s (mse_hat=%.6g) out of %d candidates",
        format_state_set(best.states),
        best.mse_hat,
        len(diagnostics),
    )
    return SearchResult(
        best_set=frozenset(best.states),
        best_mse_hat=best.mse_hat,
        diagnostics=tuple(diagnostics),
        estimate=report.estimate,
        report=report,
        split=split_batch,
    )


def diagnostics_frame(result: SearchResult) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "set": format_state_set(d.states),
                "mean_a": d.mean_a,
                "cov_hat": d.cov_hat,
                "mse_hat": d.mse_hat,
                "eligible": d.eligible,
            }
            for d in result.diagnostics
        ],
        columns=DIAGNOSTIC_COLUMNS,
    )


def write_diagnostics_csv(
    result: SearchResult, out: Optional[Union[str, Path, IO[str]]] = None
) -> str:
    """Write the diagnostics CSV to `out` (if given) and return its text."""
    text = diagnostics_frame(result).to_csv(index=False, lineterminator="\n")
    if isinstance(out, (str, Path)):
        Path(out).write_text(text, encoding="utf-8")
    elif out is not None:
        out.write(text)
    return text
