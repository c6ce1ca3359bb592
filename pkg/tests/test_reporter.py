"""Tests for the reporters."""

import json

import pandas as pd
import pytest

from stateis.estimators import estimate_is
from stateis.oracle import true_return_dp
from stateis.reporter import JsonReporter, MarkdownReporter, TerminalReporter, best_estimator
from stateis.search import SearchConfig, search_negligible_set


@pytest.fixture
def mse_table():
    return pd.DataFrame(
        {
            "domain_size": [7, 9],
            "n": [100, 100],
            "is": [0.0436, 0.0922],
            "sis_lift": [0.0183, float("nan")],
            "pdis": [0.2865, 1.0837],
        }
    )


class TestBestEstimator:
    """Tests for best_estimator."""

    def test_lowest_wins(self, mse_table):
        assert best_estimator(mse_table.iloc[0], ["is", "sis_lift", "pdis"]) == "sis_lift"

    def test_missing_values_are_skipped(self, mse_table):
        assert best_estimator(mse_table.iloc[1], ["is", "sis_lift", "pdis"]) == "is"


class TestReporters:
    """Tests for reporter classes."""

    def test_terminal_reporter_creation(self):
        reporter = TerminalReporter(verbose=True, color=False)
        assert reporter.verbose is True
        assert reporter.color is False

    def test_terminal_estimate(self, det3, hand_batch):
        report = estimate_is(hand_batch, det3.eval_policy, det3.behaviour_policy)
        text = TerminalReporter(color=False).generate(report)
        assert "Estimator: is" in text
        assert "Estimate:    4" in text

    def test_terminal_table_plain(self, mse_table):
        text = TerminalReporter(color=False).generate(mse_table)
        assert "\x1b[" not in text
        assert "failed" in text

    def test_terminal_table_highlights_best(self, mse_table):
        text = TerminalReporter(color=True).generate(mse_table)
        assert "\x1b[" in text

    def test_markdown_bolds_best(self, mse_table):
        text = MarkdownReporter().generate(mse_table)
        assert "| 7 | 100 | 0.0436 | **0.0183** | 0.2865 |" in text
        assert "| 9 | 100 | **0.0922** | failed | 1.0837 |" in text

    def test_markdown_search(self, det3, det3_batch):
        result = search_negligible_set(
            det3_batch, det3.eval_policy, det3.behaviour_policy, SearchConfig.for_mdp(det3.mdp)
        )
        text = MarkdownReporter(verbose=True).generate(result)
        assert "| `{}` |" in text

    def test_json_table(self, mse_table):
        rows = json.loads(JsonReporter().generate(mse_table))
        assert rows[0]["best"] == "sis_lift"
        assert rows[1]["mse"]["sis_lift"] is None

    def test_json_truth(self, det3):
        data = json.loads(JsonReporter().generate(true_return_dp(det3.mdp, det3.eval_policy)))
        assert data["true_return"] == pytest.approx(1.0)

    def test_unsupported_subject(self):
        with pytest.raises(TypeError):
            JsonReporter().generate(42)
