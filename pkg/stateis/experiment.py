"""
Experiment harness for the lift domains.

Runs every estimator over a grid of domain bounds, batch sizes and
replicates, scores each estimate against the exact true return, and writes
per-replicate rows plus aggregated MSE tables as CSV.
"""

import dataclasses
import hashlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .errors import ConfigError, InvalidModelError, StateISError
from .estimators import ESTIMATORS, estimate_sis
from .lift import DomainBundle, LiftDomainSpec, build_lift_domain, with_zero_rewards
from .mdp import SEED_MODULUS, TrajectoryBatch, as_seed, sample_batch
from .oracle import TruthReport, true_return_dp
from .search import SearchConfig, format_state_set, search_negligible_set
from .stats import SampleStatistics

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

ESTIMATOR_NAMES = ("is", "pdis", "sis_lift", "sis_search", "incris")
DOMAINS = ("deterministic", "stochastic")
ROW_COLUMNS = [
    "domain_size",
    "n",
    "replicate",
    "estimator",
    "estimate",
    "true_return",
    "squared_error",
    "chosen_set",
    "seed",
]
SUMMARY_COLUMNS = [
    "domain_size",
    "n",
    "estimator",
    "mse",
    "mean_estimate",
    "std_error",
    "true_return",
    "replicates",
    "failed",
]



def _integer_tuple(values: Any, name: str) -> Tuple[int, ...]:
    """Tuple of ints; floats and booleans are rejected rather than truncated."""
    if isinstance(values, (str, bytes)) or not isinstance(values, Iterable):
        raise InvalidModelError(f"{name} must be a list of integers, got {values!r}")
    items = tuple(values)
    bad = [v for v in items if isinstance(v, bool) or not isinstance(v, (int, np.integer))]
    if bad:
        raise InvalidModelError(f"{name} must contain integers only, got {bad}")
    return tuple(int(v) for v in items)

@dataclass(frozen=True)
class ExperimentConfig:
    """
    Grid of lift-domain experiments.

    Defaults reproduce the deterministic-domain study: bounds 3..8, 100 and
    1000 trajectories per run, 25 replicates, epsilon 0.01.
    """

    domain: str = "deterministic"
    bounds: Tuple[int, ...] = (3, 4, 5, 6, 7, 8)
    noise: float = 0.1
    policy_noise: Optional[float] = None
    trajectories_per_run: Tuple[int, ...] = (100, 1000)
    replicates: int = 25
    epsilon: float = 0.01
    estimators: Tuple[str, ...] = ESTIMATOR_NAMES
    base_seed: int = 0
    horizon_cap: int = 100
    output_dir: Path = Path("results")
    shared_batch: bool = True
    split_search: bool = False
    max_cardinality: int = 2
    zero_rewards: bool = False
    jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "bounds", _integer_tuple(self.bounds, "bounds"))
        sizes = _integer_tuple(self.trajectories_per_run, "trajectories_per_run")
        object.__setattr__(self, "trajectories_per_run", sizes)
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if self.domain not in DOMAINS:
            raise InvalidModelError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        if not self.bounds or any(b < 3 for b in self.bounds):
            raise InvalidModelError("bounds must be a non-empty list of integers >= 3")
        if not self.trajectories_per_run or any(n < 1 for n in self.trajectories_per_run):
            raise InvalidModelError(
                "trajectories_per_run must be a non-empty list of positive integers"
            )
        if self.replicates < 1:
            raise InvalidModelError("replicates must be at least 1")
        if not self.estimators:
            raise InvalidModelError("at least one estimator is required")
        unknown = [e for e in self.estimators if e not in ESTIMATOR_NAMES]
        if unknown:
            raise InvalidModelError(f"unknown estimators {unknown}; choose from {ESTIMATOR_NAMES}")
        repeated = sorted({e for e in self.estimators if self.estimators.count(e) > 1})
        if repeated:
            raise InvalidModelError(f"estimators listed more than once: {repeated}")
        if self.jobs < 1:
            raise InvalidModelError("jobs must be at least 1")
        as_seed(self.base_seed)
        self.domain_spec(self.bounds[0])

    def domain_spec(self, bound: int) -> LiftDomainSpec:
        noise = 0.0 if self.domain == "deterministic" else self.noise
        return LiftDomainSpec(
            bound=bound, noise=noise, horizon_cap=self.horizon_cap, policy_noise=self.policy_noise
        )

    def bundle(self, bound: int) -> DomainBundle:
        bundle = build_lift_domain(self.domain_spec(bound))
        if self.zero_rewards:
            bundle = dataclasses.replace(bundle, mdp=with_zero_rewards(bundle.mdp))
        return bundle


_CONFIG_TYPES: Dict[str, Any] = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def load_config(path: Path, **overrides: Any) -> ExperimentConfig:
    """
    Read an ExperimentConfig from a TOML file.

    Values may sit at the top level or under an [experiment] table. Keyword
    overrides that are not None replace file values.

    Raises:
        ConfigError: For syntax errors, unknown keys or invalid values.
    """
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    table = data.get("experiment", data)
    if not isinstance(table, dict):
        raise ConfigError(f"{path}: [experiment] must be a table")
    unknown = sorted(set(table) - set(_CONFIG_TYPES))
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    values = dict(table)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except (InvalidModelError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def seed_for_cell(
    base_seed: int, bound: int, n: int, replicate: int, estimator: Optional[str] = None
) -> int:
    """
    Stable 64-bit seed of one grid cell.

    A blake2b digest of the cell coordinates is XORed into the base seed, so
    adding estimators to a config leaves every shared batch unchanged.
    """
    key = f"{bound}:{n}:{replicate}" + ("" if estimator is None else f":{estimator}")
    digest = hashlib.blake2b(key.encode("ascii"), digest_size=8).digest()
    return (as_seed(base_seed) ^ int.from_bytes(digest, "little")) % SEED_MODULUS


@dataclass(frozen=True)
class ResultRow:
    """One estimator's estimate in one replicate."""

    domain_size: int
    n: int
    replicate: int
    estimator: str
    estimate: float
    true_return: float
    squared_error: float
    chosen_set: Optional[FrozenSet[int]]
    seed: int
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def as_record(self) -> Dict[str, Any]:
        return {
            "domain_size": self.domain_size,
            "n": self.n,
            "replicate": self.replicate,
            "estimator": self.estimator,
            "estimate": self.estimate,
            "true_return": self.true_return,
            "squared_error": self.squared_error,
            "chosen_set": "" if self.chosen_set is None else format_state_set(self.chosen_set),
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    """Rows and aggregated tables of one experiment run."""

    config: ExperimentConfig
    rows: Tuple[ResultRow, ...]
    truths: Mapping[int, TruthReport]
    summary: pd.DataFrame
    mse_table: pd.DataFrame
    search_sets: pd.DataFrame = field(default_factory=pd.DataFrame)

    @property
    def failures(self) -> List[ResultRow]:
        return [row for row in self.rows if row.failed]

    def rows_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.as_record() for row in self.rows], columns=ROW_COLUMNS)

    def plot_frame(self, n: int) -> pd.DataFrame:
        """Figure data for one batch size: mean estimate (or residual) with standard error."""
        part = self.summary[self.summary["n"] == n]
        y = part["mean_estimate"]
        if self.config.domain == "stochastic":
            y = y - part["true_return"]
        return pd.DataFrame(
            {
                "x": part["domain_size"].to_numpy(),
                "estimator": part["estimator"].to_numpy(),
                "y": y.to_numpy(),
                "yerr": part["std_error"].to_numpy(),
            }
        )


def _estimate_row(
    config: ExperimentConfig,
    bundle: DomainBundle,
    truth: float,
    name: str,
    n: int,
    replicate: int,
    batches: Dict[int, TrajectoryBatch],
) -> ResultRow:
    if config.shared_batch:
        seed = seed_for_cell(config.base_seed, bundle.bound, n, replicate)
    else:
        seed = seed_for_cell(config.base_seed, bundle.bound, n, replicate, name)
    pi_e, pi_b = bundle.eval_policy, bundle.behaviour_policy
    chosen: Optional[FrozenSet[int]] = None
    try:
        if seed not in batches:
            batches[seed] = sample_batch(bundle.mdp, pi_b, n, seed)
        batch = batches[seed]
        if name == "sis_lift":
            estimate = estimate_sis(batch, pi_e, pi_b, bundle.lift_states).estimate
        elif name == "sis_search":
            search_config = SearchConfig.for_mdp(
                bundle.mdp, epsilon=config.epsilon, max_cardinality=config.max_cardinality
            )
            result = search_negligible_set(
                batch, pi_e, pi_b, search_config, split_batch=config.split_search
            )
            estimate, chosen = result.estimate, result.best_set
        else:
            estimate = ESTIMATORS[name](batch, pi_e, pi_b).estimate
    except StateISError as exc:
        logger.warning(
            "%s failed for size %d, n=%d, replicate %d: %s",
            name, bundle.domain_size, n, replicate, exc,
        )
        return ResultRow(
            domain_size=bundle.domain_size, n=n, replicate=replicate, estimator=name,
            estimate=float("nan"), true_return=truth, squared_error=float("nan"),
            chosen_set=None, seed=seed, error=str(exc),
        )
    return ResultRow(
        domain_size=bundle.domain_size,
        n=n,
        replicate=replicate,
        estimator=name,
        estimate=estimate,
        true_return=truth,
        squared_error=(estimate - truth) ** 2,
        chosen_set=chosen,
        seed=seed,
    )


def _run_cell(args: Tuple[ExperimentConfig, int, int, int, float]) -> List[ResultRow]:
    config, bound, n, replicate, truth = args
    bundle = config.bundle(bound)
    batches: Dict[int, TrajectoryBatch] = {}
    return [
        _estimate_row(config, bundle, truth, name, n, replicate, batches)
        for name in config.estimators
    ]


def _summarise(config: ExperimentConfig, rows: Sequence[ResultRow]) -> pd.DataFrame:
    grouped: Dict[Tuple[int, int, str], List[ResultRow]] = {}
    for row in rows:
        grouped.setdefault((row.domain_size, row.n, row.estimator), []).append(row)
    records = []
    for bound in config.bounds:
        for n in config.trajectories_per_run:
            for name in config.estimators:
                cell = grouped.get((2 * bound + 1, n, name), [])
                ok = [r for r in cell if not r.failed]
                estimates = np.array([r.estimate for r in ok])
                records.append(
                    {
                        "domain_size": 2 * bound + 1,
                        "n": n,
                        "estimator": name,
                        "mse": (
                            SampleStatistics.mean([r.squared_error for r in ok]) if ok else np.nan
                        ),
                        "mean_estimate": SampleStatistics.mean(estimates) if ok else np.nan,
                        "std_error": SampleStatistics.standard_error(estimates),
                        "true_return": cell[0].true_return if cell else np.nan,
                        "replicates": len(ok),
                        "failed": len(cell) - len(ok),
                    }
                )
    return pd.DataFrame(records, columns=SUMMARY_COLUMNS)


def _mse_table(config: ExperimentConfig, summary: pd.DataFrame) -> pd.DataFrame:
    table = summary.pivot(index=["domain_size", "n"], columns="estimator", values="mse")
    table = table[list(config.estimators)].reset_index()
    table.columns.name = None
    return table.sort_values(["n", "domain_size"], kind="stable").reset_index(drop=True)


def _search_sets(config: ExperimentConfig, rows: Sequence[ResultRow]) -> pd.DataFrame:
    """How many replicates chose a set containing 0, 1, 2, ... lift states."""
    lift_by_size = {
        2 * b + 1: build_lift_domain(config.domain_spec(b)).lift_states for b in config.bounds
    }
    counts: Dict[Tuple[int, int, int], int] = {}
    for row in rows:
        if row.estimator != "sis_search" or row.chosen_set is None:
            continue
        lifts = len(row.chosen_set & lift_by_size[row.domain_size])
        key = (row.domain_size, row.n, lifts)
        counts[key] = counts.get(key, 0) + 1
    records = [
        {"domain_size": size, "n": n, "lift_states_in_set": lifts, "replicates": count}
        for (size, n, lifts), count in sorted(counts.items())
    ]
    return pd.DataFrame(
        records, columns=["domain_size", "n", "lift_states_in_set", "replicates"]
    )


def run_experiment(config: ExperimentConfig, progress: bool = False) -> ExperimentResult:
    """
    Run every (bound, n, replicate) cell of the config.

    All estimators of a cell share one behaviour batch unless
    config.shared_batch is False. Estimator failures are recorded on their
    row and do not stop the sweep. Rows come back in (bound, n, replicate,
    estimator) order whatever the number of worker processes.
    """
    truths: Dict[int, TruthReport] = {}
    for bound in config.bounds:
        bundle = config.bundle(bound)
        truths[bound] = true_return_dp(bundle.mdp, bundle.eval_policy)
        logger.info(
            "size %d: true return %.10g (truncation mass %.3g)",
            bundle.domain_size, truths[bound].true_return, truths[bound].truncation_mass,
        )

    cells = [
        (config, bound, n, replicate, truths[bound].true_return)
        for bound in config.bounds
        for n in config.trajectories_per_run
        for replicate in range(config.replicates)
    ]
    show = progress and sys.stderr.isatty()
    rows: List[ResultRow] = []
    with tqdm(total=len(cells), desc="cells", disable=not show) as bar:
        if config.jobs > 1:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                for cell_rows in pool.map(_run_cell, cells):
                    rows.extend(cell_rows)
                    bar.update()
        else:
            for cell in cells:
                rows.extend(_run_cell(cell))
                bar.update()

    order = {name: i for i, name in enumerate(config.estimators)}
    rows.sort(key=lambda r: (r.domain_size, r.n, r.replicate, order[r.estimator]))
    summary = _summarise(config, rows)
    return ExperimentResult(
        config=config,
        rows=tuple(rows),
        truths=truths,
        summary=summary,
        mse_table=_mse_table(config, summary),
        search_sets=_search_sets(config, rows),
    )


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path


def write_results(
    result: ExperimentResult, output_dir: Optional[Path] = None, plot_data: bool = False
) -> List[Path]:
    """Write rows.csv, mse_table.csv, summary.csv and optional extras; return the paths."""
    out = Path(output_dir or result.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        _write_csv(result.rows_frame(), out / "rows.csv"),
        _write_csv(result.mse_table, out / "mse_table.csv"),
        _write_csv(result.summary, out / "summary.csv"),
    ]
    if "sis_search" in result.config.estimators:
        written.append(_write_csv(result.search_sets, out / "search_sets.csv"))
    if result.failures:
        failures = pd.DataFrame(
            [
                {"domain_size": r.domain_size, "n": r.n, "replicate": r.replicate,
                 "estimator": r.estimator, "seed": r.seed, "error": r.error}
                for r in result.failures
            ]
        )
        written.append(_write_csv(failures, out / "failures.csv"))
    if plot_data:
        for n in result.config.trajectories_per_run:
            written.append(_write_csv(result.plot_frame(n), out / f"plot_n{n}.csv"))
    for path in written:
        logger.info("wrote %s", path)
    return written
