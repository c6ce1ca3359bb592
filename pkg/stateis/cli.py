"""
CLI interface for StateIS.

Handles argument parsing, logging setup and error reporting, and dispatches
to the truth, sample, eval, search, experiment and oracle commands.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import FrozenSet, Optional, Sequence

import colorama

from . import __version__
from .errors import StateISError
from .estimators import ESTIMATORS, EstimateReport, estimate_sis
from .experiment import ExperimentConfig, load_config, run_experiment, write_results
from .lift import (
    DEFAULT_HORIZON_CAP,
    DEFAULT_NOISE,
    DomainBundle,
    LiftDomainSpec,
    build_lift_domain,
)
from .mdp import (
    TabularPolicy,
    TrajectoryBatch,
    mdp_to_json,
    read_trajectories_jsonl,
    sample_batch,
    write_trajectories_jsonl,
)
from .oracle import DEFAULT_NODE_BUDGET, run_checks, scan_noise, true_return_dp
from .reporter import BaseReporter, JsonReporter, MarkdownReporter, TerminalReporter
from .search import (
    DEFAULT_EPSILON,
    DEFAULT_MAX_CARDINALITY,
    SearchConfig,
    search_negligible_set,
    write_diagnostics_csv,
)

logger = logging.getLogger(__name__)

EXIT_OS_ERROR = 10
EXIT_CHECK_FAILED = 11
EXIT_INTERRUPTED = 130

DOMAIN_ALIASES = {
    "det": "deterministic",
    "deterministic": "deterministic",
    "stoch": "stochastic",
    "stochastic": "stochastic",
}


def _add_domain_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("domain")
    group.add_argument(
        "--domain",
        choices=sorted(DOMAIN_ALIASES),
        default="det",
        help="Lift domain variant (default: det)",
    )
    group.add_argument("--bound", "-B", type=int, default=3, help="Half-width B >= 3 (default: 3)")
    group.add_argument(
        "--noise",
        type=float,
        help=f"Transition noise delta for the stochastic domain (default: {DEFAULT_NOISE})",
    )
    group.add_argument(
        "--policy-noise",
        type=float,
        help="Probability of the worse action under the evaluation policy (default: --noise)",
    )
    group.add_argument(
        "--horizon",
        type=int,
        default=DEFAULT_HORIZON_CAP,
        help=f"Horizon cap (default: {DEFAULT_HORIZON_CAP})",
    )


def _add_batch_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--trajectories",
        "-t",
        type=str,
        help="Trajectory JSONL to read ('-' for stdin); sampled afresh when omitted",
    )
    parser.add_argument("--n", type=int, default=1000, help="Trajectories (default: 1000)")
    parser.add_argument("--seed", type=int, default=0, help="Base seed (default: 0)")
    parser.add_argument(
        "--target",
        choices=["eval", "behaviour"],
        default="eval",
        help="Policy whose return is estimated (default: eval)",
    )


def _add_output_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--json", action="store_true", help="Output results as JSON")
    parser.add_argument("--markdown", "--md", action="store_true", help="Output as Markdown")
    parser.add_argument("--report", action="store_true", help="Output a coloured terminal report")
    parser.add_argument(
        "--output",
        "-o",
        type=str,
        help="Save output to file (auto-detects format from extension: .json, .md)",
    )


def create_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser."""
    parser = argparse.ArgumentParser(
        prog="stateis",
        description="State-based importance sampling for off-policy evaluation on tabular MDPs.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  stateis truth --domain det --bound 3
  stateis sample --bound 5 --n 100 -o batch.jsonl
  stateis eval --estimator sis --drop auto -t batch.jsonl --bound 5
  stateis search --bound 6 --n 1000 -v
  stateis experiment --config configs/det_grid.toml --output-dir results
  stateis oracle --bound 3 --max-len 12
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--verbose",
        "-v",
        action="count",
        default=0,
        help="Log progress (-v) or per-candidate diagnostics (-vv) to stderr",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    truth = commands.add_parser(
        "truth", parents=[common], help="Print the exact true return of a lift domain"
    )
    _add_domain_args(truth)
    truth.add_argument(
        "--target",
        choices=["eval", "behaviour"],
        default="eval",
        help="Policy whose return is computed (default: eval)",
    )
    _add_output_args(truth)

    sample = commands.add_parser(
        "sample", parents=[common], help="Write a trajectory log as JSONL"
    )
    _add_domain_args(sample)
    sample.add_argument("--n", type=int, default=1000, help="Trajectories (default: 1000)")
    sample.add_argument("--seed", type=int, default=0, help="Base seed (default: 0)")
    sample.add_argument(
        "--policy",
        choices=["behaviour", "eval"],
        default="behaviour",
        help="Policy that generates the log (default: behaviour)",
    )
    sample.add_argument("--output", "-o", type=str, help="JSONL file (default: stdout)")
    sample.add_argument("--mdp-json", type=str, help="Also write the MDP tensors to this file")

    evaluate = commands.add_parser(
        "eval", parents=[common], help="Run one estimator on a trajectory batch"
    )
    _add_domain_args(evaluate)
    _add_batch_args(evaluate)
    evaluate.add_argument(
        "--estimator",
        "-e",
        choices=sorted(ESTIMATORS) + ["sis"],
        default="sis",
        help="Estimator to run (default: sis)",
    )
    evaluate.add_argument(
        "--drop",
        type=str,
        default="lift",
        help="SIS dropped states: auto (search), lift, none or indices like 2,4 (default: lift)",
    )
    evaluate.add_argument(
        "--epsilon",
        type=float,
        default=DEFAULT_EPSILON,
        help=f"Search tolerance for --drop auto (default: {DEFAULT_EPSILON})",
    )
    _add_output_args(evaluate)

    search = commands.add_parser(
        "search", parents=[common], help="Run the negligible-set search, print diagnostics CSV"
    )
    _add_domain_args(search)
    _add_batch_args(search)
    search.add_argument(
        "--epsilon",
        type=float,
        default=DEFAULT_EPSILON,
        help=f"Negligibility tolerance (default: {DEFAULT_EPSILON})",
    )
    search.add_argument(
        "--max-cardinality",
        type=int,
        default=DEFAULT_MAX_CARDINALITY,
        help=f"Largest candidate set (default: {DEFAULT_MAX_CARDINALITY})",
    )
    search.add_argument(
        "--split",
        action="store_true",
        help="Search on one half of the batch and estimate on the other",
    )
    search.add_argument("--workers", type=int, default=1, help="Scoring threads (default: 1)")
    _add_output_args(search)

    experiment = commands.add_parser(
        "experiment", parents=[common], help="Run an experiment config and write result CSVs"
    )
    experiment.add_argument(
        "--config", "-c", type=str, help="TOML config (default: deterministic-domain grid)"
    )
    experiment.add_argument("--output-dir", type=str, help="Result directory (overrides config)")
    experiment.add_argument("--jobs", "-j", type=int, help="Worker processes (overrides config)")
    experiment.add_argument("--replicates", type=int, help="Replicates per cell (overrides config)")
    experiment.add_argument(
        "--plot-data", action="store_true", help="Also write plot_n{n}.csv figure data"
    )
    experiment.add_argument("--quiet", "-q", action="store_true", help="Hide the progress bar")
    experiment.add_argument("--json", action="store_true", help="Print the MSE table as JSON")
    experiment.add_argument(
        "--markdown", "--md", action="store_true", help="Print the MSE table as Markdown"
    )

    oracle = commands.add_parser(
        "oracle", parents=[common], help="Run exact enumeration checks on a small lift domain"
    )
    _add_domain_args(oracle)
    oracle.add_argument("--max-len", type=int, default=12, help="Enumeration depth (default: 12)")
    oracle.add_argument(
        "--drop", type=str, default="lift", help="Dropped states: lift, none or indices"
    )
    oracle.add_argument(
        "--budget",
        type=int,
        default=DEFAULT_NODE_BUDGET,
        help=f"Largest number of enumerated leaves (default: {DEFAULT_NODE_BUDGET})",
    )
    oracle.add_argument(
        "--scan-target",
        type=float,
        action="append",
        help="Scan the stochastic domain's noise level for this true return (repeatable)",
    )

    return parser


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def detect_output_format(output_path: Optional[str]) -> Optional[str]:
    """
    Detect output format from file extension.

    Args:
        output_path: Path to the output file.

    Returns:
        The detected format ('json', 'markdown', or None).
    """
    if not output_path:
        return None
    output_path = output_path.lower()
    if output_path.endswith(".json"):
        return "json"
    elif output_path.endswith((".md", ".markdown")):
        return "markdown"
    return None


def select_reporter(args: argparse.Namespace) -> Optional[BaseReporter]:
    """Reporter picked by the format flags or the output extension; None for plain output."""
    output_format = detect_output_format(getattr(args, "output", None))
    verbose = args.verbose > 0
    if args.json or output_format == "json":
        return JsonReporter(verbose=verbose)
    if args.markdown or output_format == "markdown":
        return MarkdownReporter(verbose=verbose)
    if getattr(args, "report", False):
        return TerminalReporter(verbose=verbose, color=sys.stdout.isatty() and not args.output)
    return None


def emit(text: str, output: Optional[str]) -> None:
    """Write to a file or stdout."""
    if output:
        Path(output).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
        print(f"Saved to: {output}", file=sys.stderr)
    else:
        print(text)


def domain_from_args(args: argparse.Namespace) -> DomainBundle:
    domain = DOMAIN_ALIASES[args.domain]
    if domain == "deterministic":
        noise = 0.0 if args.noise is None else args.noise
    else:
        noise = DEFAULT_NOISE if args.noise is None else args.noise
    spec = LiftDomainSpec(
        bound=args.bound, noise=noise, horizon_cap=args.horizon, policy_noise=args.policy_noise
    )
    return build_lift_domain(spec)


def parse_state_set(text: str, bundle: DomainBundle) -> FrozenSet[int]:
    """Parse 'lift', 'none' or a comma-separated list of state indices."""
    text = text.strip().lower()
    if text == "lift":
        return bundle.lift_states
    if text in ("none", "", "{}"):
        return frozenset()
    try:
        parts = text.strip("{}").replace(";", ",").split(",")
        return frozenset(int(part) for part in parts if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid state set {text!r}") from None


def target_policy(args: argparse.Namespace, bundle: DomainBundle) -> TabularPolicy:
    return bundle.behaviour_policy if args.target == "behaviour" else bundle.eval_policy


def load_batch(args: argparse.Namespace, bundle: DomainBundle) -> TrajectoryBatch:
    if args.trajectories:
        source = sys.stdin if args.trajectories == "-" else args.trajectories
        batch = read_trajectories_jsonl(source)
        bundle.mdp.check_batch(batch)
        return batch
    return sample_batch(bundle.mdp, bundle.behaviour_policy, args.n, args.seed)


def cmd_truth(args: argparse.Namespace) -> int:
    bundle = domain_from_args(args)
    report = true_return_dp(bundle.mdp, target_policy(args, bundle))
    reporter = select_reporter(args)
    emit(repr(report.true_return) if reporter is None else reporter.generate(report), args.output)
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    bundle = domain_from_args(args)
    policy = bundle.eval_policy if args.policy == "eval" else bundle.behaviour_policy
    batch = sample_batch(bundle.mdp, policy, args.n, args.seed)
    if args.output:
        write_trajectories_jsonl(batch, args.output)
        logger.info("wrote %d trajectories to %s", batch.n, args.output)
    else:
        write_trajectories_jsonl(batch, sys.stdout)
    if args.mdp_json:
        Path(args.mdp_json).write_text(mdp_to_json(bundle.mdp) + "\n", encoding="utf-8")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    bundle = domain_from_args(args)
    batch = load_batch(args, bundle)
    pi_e, pi_b = target_policy(args, bundle), bundle.behaviour_policy
    report: EstimateReport
    if args.estimator != "sis":
        report = ESTIMATORS[args.estimator](batch, pi_e, pi_b)
    elif args.drop.strip().lower() == "auto":
        config = SearchConfig.for_mdp(bundle.mdp, epsilon=args.epsilon)
        report = search_negligible_set(batch, pi_e, pi_b, config).report
    else:
        report = estimate_sis(batch, pi_e, pi_b, parse_state_set(args.drop, bundle))
    reporter = select_reporter(args)
    emit(repr(report.estimate) if reporter is None else reporter.generate(report), args.output)
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    bundle = domain_from_args(args)
    batch = load_batch(args, bundle)
    config = SearchConfig.for_mdp(
        bundle.mdp, epsilon=args.epsilon, max_cardinality=args.max_cardinality
    )
    result = search_negligible_set(
        batch, target_policy(args, bundle), bundle.behaviour_policy, config,
        split_batch=args.split, workers=args.workers,
    )
    reporter = select_reporter(args)
    if reporter is None:
        emit(write_diagnostics_csv(result).rstrip("\n"), args.output)
    else:
        emit(reporter.generate(result), args.output)
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    overrides = {"output_dir": args.output_dir, "jobs": args.jobs, "replicates": args.replicates}
    if args.config:
        config = load_config(Path(args.config), **overrides)
    else:
        config = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    result = run_experiment(config, progress=not args.quiet)
    paths = write_results(result, plot_data=args.plot_data)
    if args.json:
        reporter: BaseReporter = JsonReporter()
    elif args.markdown:
        reporter = MarkdownReporter()
    else:
        reporter = TerminalReporter(color=sys.stdout.isatty())
    print(reporter.generate(result.mse_table))
    print(f"Wrote {len(paths)} files to {config.output_dir}", file=sys.stderr)
    if result.failures:
        print(f"{len(result.failures)} estimator runs failed; see failures.csv", file=sys.stderr)
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    bundle = domain_from_args(args)
    moments, checks = run_checks(
        bundle, args.max_len, parse_state_set(args.drop, bundle), node_budget=args.budget
    )
    print(f"leaves={moments.leaf_count} truncated_mass={moments.truncated_mass:.6g}")
    for check in checks:
        status = "ok" if check.passed else "FAILED"
        print(f"{check.name:<22} {check.value!r:>24} {check.expected!r:>24} {status}")
    if args.scan_target:
        scan = scan_noise(args.bound, args.scan_target, horizon_cap=args.horizon)
        for target in args.scan_target:
            matches = scan.matches(target)
            if not matches:
                print(f"scan {target!r}: no noise level within {scan.tolerance:g}")
            for delta, value in matches:
                print(f"scan {target!r}: delta={delta:.6f} true_return={value!r}")
    return 0 if all(check.passed for check in checks) else EXIT_CHECK_FAILED


COMMANDS = {
    "truth": cmd_truth,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "search": cmd_search,
    "experiment": cmd_experiment,
    "oracle": cmd_oracle,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the CLI.

    Returns:
        Exit code: 0 on success, the error's exit code on a StateIS error,
        10 for unreadable files, 11 for failed oracle checks and 130 when
        interrupted. Argument errors exit with argparse's code 2.
    """
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    configure_logging(args.verbose)
    colorama.just_fix_windows_console()
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("\nInterrupted.", file=sys.stderr)
        return EXIT_INTERRUPTED
    except argparse.ArgumentTypeError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 2
    except StateISError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_OS_ERROR


def main() -> int:
    """
    Main entry point for the CLI.

    Returns:
        Exit code (0 for success).
    """
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
