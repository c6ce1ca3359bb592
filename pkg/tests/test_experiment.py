"""Tests for the experiment harness."""

import dataclasses

import pandas as pd
import pytest

from stateis.errors import ConfigError, InvalidModelError
from stateis.experiment import (
    ROW_COLUMNS,
    ExperimentConfig,
    load_config,
    run_experiment,
    seed_for_cell,
    write_results,
)
from stateis.stats import SampleStatistics

REFERENCE_MSE_1000 = {
    7: {"is": 0.0071, "sis_lift": 0.0020},
    9: {"is": 0.0212, "sis_lift": 0.0022},
    11: {"is": 0.0460, "sis_lift": 0.0026},
    13: {"is": 0.0832, "sis_lift": 0.0021},
    15: {"is": 0.1718, "sis_lift": 0.0040},
    17: {"is": 0.3346, "sis_lift": 0.0035},
}


def small_config(tmp_path, **overrides):
    values = dict(
        bounds=(3, 4),
        trajectories_per_run=(30,),
        replicates=3,
        output_dir=tmp_path / "out",
    )
    values.update(overrides)
    return ExperimentConfig(**values)


class TestSeedForCell:
    """Tests for per-cell seeding."""

    def test_stable(self):
        assert seed_for_cell(0, 3, 100, 4) == seed_for_cell(0, 3, 100, 4)

    def test_distinct_cells(self):
        seeds = {seed_for_cell(0, b, n, r) for b in (3, 4) for n in (100, 1000) for r in range(5)}
        assert len(seeds) == 20

    def test_estimator_mixing(self):
        assert seed_for_cell(0, 3, 100, 0, "is") != seed_for_cell(0, 3, 100, 0)

    def test_base_seed_is_xored(self):
        assert seed_for_cell(5, 3, 100, 0) == seed_for_cell(0, 3, 100, 0) ^ 5

    def test_range(self):
        assert 0 <= seed_for_cell(2**64 - 1, 8, 1000, 24) < 2**64


class TestExperimentConfig:
    """Tests for ExperimentConfig validation and loading."""

    def test_defaults(self):
        config = ExperimentConfig()
        assert config.bounds == (3, 4, 5, 6, 7, 8)
        assert config.trajectories_per_run == (100, 1000)
        assert config.replicates == 25
        assert config.estimators == ("is", "pdis", "sis_lift", "sis_search", "incris")

    @pytest.mark.parametrize(
        "overrides",
        [
            {"replicates": 0},
            {"bounds": (2, 3)},
            {"bounds": ()},
            {"estimators": ()},
            {"estimators": ("is", "wis")},
            {"domain": "windy"},
            {"base_seed": -1},
            {"jobs": 0},
            {"estimators": ("is", "pdis", "is")},
            {"bounds": (3, 3.5)},
            {"bounds": (True, 4)},
            {"trajectories_per_run": (100.0,)},
            {"trajectories_per_run": 100},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(InvalidModelError):
            ExperimentConfig(**overrides)

    def test_load_config(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(
            '[experiment]\ndomain = "stochastic"\nbounds = [3, 5]\nnoise = 0.2\nreplicates = 4\n',
            encoding="utf-8",
        )
        config = load_config(path, replicates=2, jobs=None)
        assert config.domain == "stochastic"
        assert config.bounds == (3, 5)
        assert config.noise == 0.2
        assert config.replicates == 2

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[experiment]\nreplicate = 4\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="replicate"):
            load_config(path)

    def test_syntax_error(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[experiment\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_invalid_value(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[experiment]\nreplicates = 0\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_duplicate_estimators_rejected_before_running(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('[experiment]\nestimators = ["is", "is"]\n', encoding="utf-8")
        with pytest.raises(ConfigError, match="more than once"):
            load_config(path)

    def test_float_bound_in_toml(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[experiment]\nbounds = [3.5]\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="integers"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_config(tmp_path / "absent.toml")


class TestRunExperiment:
    """Tests for run_experiment and write_results."""

    def test_rows(self, tmp_path):
        config = small_config(tmp_path)
        result = run_experiment(config)
        assert len(result.rows) == 2 * 1 * 3 * 5
        for row in result.rows:
            assert row.domain_size in (7, 9)
            expected = (row.estimate - row.true_return) ** 2
            assert row.squared_error == pytest.approx(expected, abs=1e-12)
            assert row.true_return == pytest.approx(1.0, abs=1e-12)
            assert (row.chosen_set is not None) == (row.estimator == "sis_search")

    def test_deterministic_order(self, tmp_path):
        result = run_experiment(small_config(tmp_path))
        keys = [(r.domain_size, r.n, r.replicate) for r in result.rows]
        assert keys == sorted(keys)
        assert [r.estimator for r in result.rows[:5]] == list(result.config.estimators)

    def test_shared_batch(self, tmp_path):
        result = run_experiment(small_config(tmp_path))
        first_cell = result.rows[:5]
        assert len({row.seed for row in first_cell}) == 1
        assert first_cell[0].seed == seed_for_cell(0, 3, 30, 0)

    def test_independent_batches(self, tmp_path):
        result = run_experiment(small_config(tmp_path, shared_batch=False))
        assert len({row.seed for row in result.rows[:5]}) == 5

    def test_mse_table_matches_rows(self, tmp_path):
        result = run_experiment(small_config(tmp_path))
        table = result.mse_table.set_index(["domain_size", "n"])
        for name in result.config.estimators:
            cell = [r for r in result.rows if r.domain_size == 9 and r.estimator == name]
            errors = [r.squared_error for r in cell]
            expected = SampleStatistics.mean(errors)
            assert table.loc[(9, 30), name] == pytest.approx(expected, abs=1e-12)
        columns = ["domain_size", "n"] + list(result.config.estimators)
        assert list(result.mse_table.columns) == columns

    def test_zero_rewards(self, tmp_path):
        result = run_experiment(small_config(tmp_path, zero_rewards=True))
        assert (result.summary["mse"] == 0.0).all()

    def test_failures_are_recorded(self, tmp_path):
        config = small_config(tmp_path, trajectories_per_run=(1,), estimators=("is", "sis_search"))
        result = run_experiment(config)
        failed = result.failures
        assert failed and all(row.estimator == "sis_search" for row in failed)
        assert all(not row.failed for row in result.rows if row.estimator == "is")
        summary = result.summary.set_index(["domain_size", "n", "estimator"])
        assert summary.loc[(7, 1, "sis_search"), "failed"] == 3
        paths = write_results(result)
        assert (config.output_dir / "failures.csv") in paths

    def test_write_results(self, tmp_path):
        config = small_config(tmp_path)
        paths = write_results(run_experiment(config), plot_data=True)
        names = {p.name for p in paths}
        expected = {"rows.csv", "mse_table.csv", "summary.csv", "search_sets.csv", "plot_n30.csv"}
        assert expected <= names
        rows_text = (config.output_dir / "rows.csv").read_text(encoding="utf-8")
        assert rows_text.splitlines()[0] == ",".join(ROW_COLUMNS)
        plot = pd.read_csv(config.output_dir / "plot_n30.csv")
        assert list(plot.columns) == ["x", "estimator", "y", "yerr"]
        assert set(plot["x"]) == {7, 9}

    def test_byte_identical_reruns(self, tmp_path):
        first = write_results(run_experiment(small_config(tmp_path)), tmp_path / "a")
        second = write_results(run_experiment(small_config(tmp_path)), tmp_path / "b")
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_worker_processes_match_serial(self, tmp_path):
        serial = run_experiment(small_config(tmp_path))
        parallel = run_experiment(small_config(tmp_path, jobs=2))
        assert serial.rows_frame().equals(parallel.rows_frame())

    def test_stochastic_plot_uses_residuals(self, tmp_path):
        config = small_config(tmp_path, domain="stochastic", bounds=(3,), estimators=("is",))
        result = run_experiment(config)
        plot = result.plot_frame(30)
        summary = result.summary
        expected = summary["mean_estimate"].iloc[0] - summary["true_return"].iloc[0]
        assert plot["y"].iloc[0] == pytest.approx(expected)


@pytest.fixture(scope="module")
def deterministic_grid(tmp_path_factory):
    config = ExperimentConfig(output_dir=tmp_path_factory.mktemp("det"))
    return run_experiment(config)


@pytest.mark.slow
class TestDeterministicReproduction:
    """The deterministic-domain study: sizes 7..17, n in {100, 1000}, 25 replicates."""

    def test_sis_lift_is_best_everywhere(self, deterministic_grid):
        for _, row in deterministic_grid.mse_table.iterrows():
            others = [row[name] for name in ("is", "pdis", "sis_search", "incris")]
            assert row["sis_lift"] <= min(others), row.to_dict()

    def test_magnitudes_at_1000_trajectories(self, deterministic_grid):
        table = deterministic_grid.mse_table.set_index(["domain_size", "n"])
        for size, reported in REFERENCE_MSE_1000.items():
            for name, value in reported.items():
                measured = table.loc[(size, 1000), name]
                if value / 3 <= measured <= value * 3:
                    continue
                config = dataclasses.replace(
                    deterministic_grid.config,
                    bounds=((size - 1) // 2,),
                    trajectories_per_run=(1000,),
                    replicates=250,
                    estimators=(name,),
                )
                errors = [r.squared_error for r in run_experiment(config).rows]
                lower, upper = SampleStatistics.bootstrap_interval(errors, level=0.99)
                assert lower <= value <= upper, (size, name, measured)


@pytest.mark.slow
class TestStochasticProperties:
    """The stochastic-domain study with noise 0.1 at n = 1000."""

    @pytest.fixture(scope="class")
    def grid(self, tmp_path_factory):
        config = ExperimentConfig(
            domain="stochastic",
            noise=0.1,
            trajectories_per_run=(1000,),
            output_dir=tmp_path_factory.mktemp("stoch"),
        )
        return run_experiment(config).mse_table

    def test_search_beats_is(self, grid):
        assert (grid["sis_search"] <= grid["is"]).sum() >= 4

    def test_incris_beats_pdis(self, grid):
        assert (grid["incris"] <= grid["pdis"]).sum() >= 4
