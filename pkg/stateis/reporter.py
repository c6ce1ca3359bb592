"""
Output formatters for StateIS.

Handles terminal, markdown, and JSON output for estimates, negligible-set
searches, true returns and experiment MSE tables.
"""

import json
import math
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Union

import pandas as pd
from colorama import Fore, Style

from .estimators import EstimateReport
from .oracle import TruthReport
from .search import SearchResult, format_state_set

Subject = Union[EstimateReport, SearchResult, TruthReport, pd.DataFrame]
KEY_COLUMNS = ("domain_size", "n")


def estimator_columns(table: pd.DataFrame) -> List[str]:
    return [c for c in table.columns if c not in KEY_COLUMNS]


def best_estimator(row: pd.Series, columns: List[str]) -> Optional[str]:
    """Column with the lowest finite MSE in a table row; first one wins ties."""
    best, best_value = None, math.inf
    for column in columns:
        value = row[column]
        if pd.notna(value) and value < best_value:
            best, best_value = column, float(value)
    return best


class BaseReporter(ABC):
    """Base class for all reporters."""

    def __init__(self, verbose: bool = False):
        """
        Initialize the reporter.

        Args:
            verbose: If True, include per-candidate search diagnostics and
                the estimator's extra fields.
        """
        self.verbose = verbose

    def generate(self, subject: Subject) -> str:
        """Render any supported result object."""
        if isinstance(subject, EstimateReport):
            return self.estimate(subject)
        if isinstance(subject, SearchResult):
            return self.search(subject)
        if isinstance(subject, TruthReport):
            return self.truth(subject)
        if isinstance(subject, pd.DataFrame):
            return self.mse_table(subject)
        raise TypeError(f"cannot report a {type(subject).__name__}")

    @abstractmethod
    def estimate(self, report: EstimateReport) -> str:
        pass

    @abstractmethod
    def search(self, result: SearchResult) -> str:
        pass

    @abstractmethod
    def truth(self, report: TruthReport) -> str:
        pass

    @abstractmethod
    def mse_table(self, table: pd.DataFrame) -> str:
        pass


class TerminalReporter(BaseReporter):
    """
    Coloured terminal output.

    The lowest MSE of every table row is highlighted in green.
    """

    def __init__(self, verbose: bool = False, color: bool = True):
        super().__init__(verbose=verbose)
        self.color = color

    def _color(self, text: str, *codes: str) -> str:
        if not self.color:
            return text
        return "".join(codes) + text + Style.RESET_ALL

    def _header(self, title: str) -> str:
        return self._color(f"▶ {title}", Style.BRIGHT, Fore.CYAN)

    def estimate(self, report: EstimateReport) -> str:
        lines = [
            self._header(f"Estimator: {report.estimator_name}"),
            f"  Estimate:    {self._color(f'{report.estimate:.10g}', Style.BRIGHT)}",
            f"  Std. error:  {report.std_error:.6g}",
            f"  Trajectories: {report.n}",
        ]
        if report.truncated:
            lines.append(self._color(f"  Truncated:   {report.truncated}", Fore.YELLOW))
        if self.verbose:
            for key, value in report.extra.items():
                lines.append(f"  {key}: {value}")
        return "\n".join(lines)

    def search(self, result: SearchResult) -> str:
        chosen = format_state_set(result.best_set)
        eligible = len(result.eligible_candidates())
        lines = [
            self._header("Negligible-set search"),
            f"  Chosen set:  {self._color(chosen, Style.BRIGHT, Fore.GREEN)}",
            f"  MSE-hat:     {result.best_mse_hat:.6g}",
            f"  Estimate:    {self._color(f'{result.estimate:.10g}', Style.BRIGHT)}",
            f"  Eligible:    {eligible} of {len(result.diagnostics)} candidates",
        ]
        if result.split:
            lines.append(self._color("  search and estimate on separate halves", Style.DIM))
        if self.verbose:
            lines.append("")
            lines.append(f"  {'set':<12} {'mean_a':>10} {'cov_hat':>11} {'mse_hat':>11}")
            for d in result.diagnostics:
                text = (
                    f"  {format_state_set(d.states):<12} {d.mean_a:>10.5f} "
                    f"{d.cov_hat:>11.5g} {d.mse_hat:>11.5g}"
                )
                lines.append(text if d.eligible else self._color(text, Style.DIM))
        return "\n".join(lines)

    def truth(self, report: TruthReport) -> str:
        lines = [
            self._header("True return"),
            f"  Value:       {self._color(repr(report.true_return), Style.BRIGHT)}",
            f"  Horizon:     {report.horizon_used}",
        ]
        if report.truncation_mass > 0:
            mass = f"  Truncation mass: {report.truncation_mass:.3g}"
            lines.append(self._color(mass, Fore.YELLOW))
        return "\n".join(lines)

    def mse_table(self, table: pd.DataFrame) -> str:
        columns = estimator_columns(table)
        width = max([10] + [len(c) + 2 for c in columns])
        header = f"{'size':>5} {'n':>6} " + "".join(f"{c:>{width}}" for c in columns)
        lines = [self._header("Mean squared error"), self._color(header, Style.BRIGHT)]
        for _, row in table.iterrows():
            best = best_estimator(row, columns)
            cells = []
            for column in columns:
                value = row[column]
                text = f"{value:>{width}.4f}" if pd.notna(value) else f"{'failed':>{width}}"
                if column == best:
                    text = self._color(text, Style.BRIGHT, Fore.GREEN)
                cells.append(text)
            lines.append(f"{int(row['domain_size']):>5} {int(row['n']):>6} " + "".join(cells))
        return "\n".join(lines)


class MarkdownReporter(BaseReporter):
    """Generate Markdown report output; the best estimator per row is bold."""

    def estimate(self, report: EstimateReport) -> str:
        lines = [
            f"## Estimate: `{report.estimator_name}`",
            "",
            "| Field | Value |",
            "|-------|-------|",
            f"| Estimate | {report.estimate:.10g} |",
            f"| Std. error | {report.std_error:.6g} |",
            f"| Trajectories | {report.n} |",
            f"| Truncated | {report.truncated} |",
        ]
        if self.verbose:
            lines.extend(f"| {key} | {value} |" for key, value in report.extra.items())
        return "\n".join(lines)

    def search(self, result: SearchResult) -> str:
        lines = [
            "## Negligible-set search",
            "",
            f"**Chosen set:** `{format_state_set(result.best_set)}`  ",
            f"**MSE-hat:** {result.best_mse_hat:.6g}  ",
            f"**Estimate:** {result.estimate:.10g}",
            "",
        ]
        if self.verbose:
            lines.append("| Set | mean A | Cov-hat | MSE-hat | Eligible |")
            lines.append("|-----|--------|---------|---------|----------|")
            for d in result.diagnostics:
                lines.append(
                    f"| `{format_state_set(d.states)}` | {d.mean_a:.5f} | {d.cov_hat:.5g} "
                    f"| {d.mse_hat:.5g} | {'yes' if d.eligible else 'no'} |"
                )
        return "\n".join(lines)

    def truth(self, report: TruthReport) -> str:
        return "\n".join(
            [
                "## True return",
                "",
                f"**Value:** {report.true_return!r}  ",
                f"**Horizon:** {report.horizon_used}  ",
                f"**Truncation mass:** {report.truncation_mass:.3g}",
            ]
        )

    def mse_table(self, table: pd.DataFrame) -> str:
        columns = estimator_columns(table)
        lines = [
            "## Mean squared error",
            "",
            "| Size | n | " + " | ".join(columns) + " |",
            "|------|---|" + "|".join("---" for _ in columns) + "|",
        ]
        for _, row in table.iterrows():
            best = best_estimator(row, columns)
            cells = []
            for column in columns:
                value = row[column]
                text = f"{value:.4f}" if pd.notna(value) else "failed"
                cells.append(f"**{text}**" if column == best else text)
            key = f"| {int(row['domain_size'])} | {int(row['n'])} | "
            lines.append(key + " | ".join(cells) + " |")
        return "\n".join(lines)


class JsonReporter(BaseReporter):
    """Generate JSON report output."""

    def estimate(self, report: EstimateReport) -> str:
        return json.dumps(report.to_dict(), indent=2)

    def search(self, result: SearchResult) -> str:
        data: Dict[str, Any] = {
            "best_set": sorted(result.best_set),
            "best_mse_hat": result.best_mse_hat,
            "estimate": result.estimate,
            "split": result.split,
            "report": result.report.to_dict(),
        }
        if self.verbose:
            data["diagnostics"] = [
                {
                    "set": list(d.states),
                    "mean_a": d.mean_a,
                    "cov_hat": d.cov_hat,
                    "mse_hat": d.mse_hat,
                    "eligible": d.eligible,
                }
                for d in result.diagnostics
            ]
        return json.dumps(data, indent=2)

    def truth(self, report: TruthReport) -> str:
        return json.dumps(
            {
                "true_return": report.true_return,
                "horizon_used": report.horizon_used,
                "truncation_mass": report.truncation_mass,
            },
            indent=2,
        )

    def mse_table(self, table: pd.DataFrame) -> str:
        columns = estimator_columns(table)
        rows = []
        for _, row in table.iterrows():
            rows.append(
                {
                    "domain_size": int(row["domain_size"]),
                    "n": int(row["n"]),
                    "mse": {c: (None if pd.isna(row[c]) else float(row[c])) for c in columns},
                    "best": best_estimator(row, columns),
                }
            )
        return json.dumps(rows, indent=2)
