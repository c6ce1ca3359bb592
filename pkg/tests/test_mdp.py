"""Tests for tabular MDPs, policies and trajectory sampling."""

import io

import numpy as np
import pytest

from stateis.errors import (
    DegeneratePolicyError,
    InvalidModelError,
    SupportViolationError,
    TrajectoryFormatError,
)
from stateis.lift import LEFT, RIGHT
from stateis.mdp import (
    SEED_MODULUS,
    TabularMdp,
    TabularPolicy,
    Trajectory,
    TrajectoryBatch,
    action_ratio,
    behaviour_support,
    mdp_from_json,
    mdp_to_json,
    read_trajectories_jsonl,
    sample_batch,
    sample_trajectory,
    write_trajectories_jsonl,
)


def chain_mdp(**overrides):
    """Two states, one action: state 0 moves to terminal state 1 with reward 1."""
    values = dict(
        transition=np.array([[[0.0, 1.0]], [[0.0, 1.0]]]),
        reward=np.array([[[0.0, 1.0]], [[0.0, 0.0]]]),
        terminal_states=frozenset({1}),
        start_distribution=np.array([1.0, 0.0]),
        horizon_cap=5,
    )
    values.update(overrides)
    return TabularMdp(**values)


class TestTabularMdp:
    """Tests for TabularMdp validation."""

    def test_valid_model(self):
        mdp = chain_mdp()
        assert mdp.num_states == 2
        assert mdp.num_actions == 1
        assert mdp.non_terminal_states == (0,)

    def test_rows_must_sum_to_one(self):
        with pytest.raises(InvalidModelError):
            chain_mdp(transition=np.array([[[0.0, 0.9]], [[0.0, 1.0]]]))

    def test_reward_shape_must_match(self):
        with pytest.raises(InvalidModelError):
            chain_mdp(reward=np.zeros((2, 2, 2)))

    def test_start_mass_on_terminal(self):
        with pytest.raises(InvalidModelError):
            chain_mdp(start_distribution=np.array([0.5, 0.5]))

    def test_horizon_must_be_positive(self):
        with pytest.raises(InvalidModelError):
            chain_mdp(horizon_cap=0)

    def test_tensors_are_read_only(self):
        mdp = chain_mdp()
        with pytest.raises(ValueError):
            mdp.transition[0, 0, 0] = 1.0

    def test_with_horizon(self):
        assert chain_mdp().with_horizon(9).horizon_cap == 9


class TestTabularPolicy:
    """Tests for TabularPolicy."""

    def test_uniform(self):
        policy = TabularPolicy.uniform(3, 2)
        assert policy.probs.shape == (3, 2)
        assert policy.prob(1, 0) == 0.5

    def test_out_of_range(self):
        with pytest.raises(InvalidModelError):
            TabularPolicy(np.array([[1.5, -0.5]]))

    def test_validate_checks_rows(self):
        with pytest.raises(InvalidModelError):
            TabularPolicy(np.array([[0.5, 0.4]])).validate()

    def test_degenerate_row_fails_when_sampled(self):
        mdp = chain_mdp()
        policy = TabularPolicy(np.array([[0.5], [1.0]]))
        with pytest.raises(DegeneratePolicyError) as info:
            sample_trajectory(mdp, policy, 0)
        assert info.value.state == 0


class TestSampling:
    """Tests for seeded trajectory sampling."""

    def test_deterministic_evaluation_path(self, det3):
        trajectory = sample_trajectory(det3.mdp, det3.eval_policy, 123)
        assert trajectory.states == (3, 4, 5)
        assert trajectory.actions == (RIGHT, RIGHT, RIGHT)
        assert trajectory.rewards == (-1.0, -1.0, 3.0)
        assert trajectory.terminated and not trajectory.truncated
        assert trajectory.total_return == 1.0

    def test_same_seed_same_trajectory(self, stoch3):
        first = sample_trajectory(stoch3.mdp, stoch3.behaviour_policy, 42)
        second = sample_trajectory(stoch3.mdp, stoch3.behaviour_policy, 42)
        assert first == second

    def test_batch_uses_consecutive_seeds(self, stoch3):
        batch = sample_batch(stoch3.mdp, stoch3.behaviour_policy, 5, 100)
        assert [t.seed for t in batch] == [100, 101, 102, 103, 104]
        assert batch.trajectories[3] == sample_trajectory(stoch3.mdp, stoch3.behaviour_policy, 103)

    def test_seed_wraps_around(self, det3):
        batch = sample_batch(det3.mdp, det3.behaviour_policy, 2, SEED_MODULUS - 1)
        assert [t.seed for t in batch] == [SEED_MODULUS - 1, 0]

    def test_invalid_seed(self, det3):
        with pytest.raises(InvalidModelError):
            sample_trajectory(det3.mdp, det3.behaviour_policy, -1)

    def test_truncation_at_horizon_cap(self, det3):
        trajectory = sample_trajectory(det3.mdp.with_horizon(1), det3.behaviour_policy, 0)
        assert trajectory.length == 1
        assert trajectory.truncated and not trajectory.terminated

    def test_steps_never_start_in_terminal_states(self, stoch3):
        batch = sample_batch(stoch3.mdp, stoch3.behaviour_policy, 50, 0)
        for trajectory in batch:
            assert not set(trajectory.states) & stoch3.mdp.terminal_states

    def test_batch_size_must_be_positive(self, det3):
        with pytest.raises(InvalidModelError):
            sample_batch(det3.mdp, det3.behaviour_policy, 0, 0)

    def test_single_state_self_loop(self):
        loop = TabularMdp(
            transition=np.ones((1, 1, 1)),
            reward=np.zeros((1, 1, 1)),
            terminal_states=frozenset(),
            start_distribution=np.ones(1),
            horizon_cap=5,
        )
        trajectory = sample_trajectory(loop, TabularPolicy.uniform(1, 1), 9)
        assert trajectory.length == 5
        assert trajectory.truncated and not trajectory.terminated
        assert trajectory.total_return == 0.0

    def test_transition_frequencies_match_model(self):
        rng = np.random.default_rng(11)
        transition = rng.dirichlet(np.ones(2), size=(2, 2))
        mdp = TabularMdp(
            transition=transition,
            reward=np.zeros((2, 2, 2)),
            terminal_states=frozenset(),
            start_distribution=np.array([1.0, 0.0]),
            horizon_cap=1000,
        )
        batch = sample_batch(mdp, TabularPolicy.uniform(2, 2), 110, 0)
        counts = np.zeros((2, 2, 2))
        for trajectory in batch:
            states = trajectory.states
            for t in range(len(states) - 1):
                counts[states[t], trajectory.actions[t], states[t + 1]] += 1
        assert counts.sum() >= 100_000
        for s in range(2):
            for a in range(2):
                visits = counts[s, a].sum()
                p = mdp.transition[s, a, 1]
                std_error = np.sqrt(p * (1 - p) / visits)
                assert abs(counts[s, a, 1] / visits - p) <= 3 * std_error


class TestTrajectoryBatch:
    """Tests for Trajectory and TrajectoryBatch helpers."""

    def test_exactly_one_end_flag(self):
        with pytest.raises(InvalidModelError):
            Trajectory(((0, 0, 1.0),), True, True, 0)

    def test_returns(self, hand_batch):
        assert hand_batch.returns().tolist() == [1.0, -5.0]
        assert hand_batch.max_length == 3
        assert hand_batch.truncated_count == 0

    def test_split(self, det3):
        batch = sample_batch(det3.mdp, det3.behaviour_policy, 5, 10)
        first, second = batch.split()
        assert (first.n, second.n) == (3, 2)
        assert second.base_seed == 13
        assert second.trajectories[0].seed == 13

    def test_split_needs_two(self, hand_batch):
        single = TrajectoryBatch(hand_batch.trajectories[:1], 0)
        with pytest.raises(InvalidModelError):
            single.split()


class TestRatios:
    """Tests for action ratios and behaviour support."""

    def test_action_ratio(self, det3):
        assert action_ratio(det3.eval_policy, det3.behaviour_policy, 3, RIGHT) == 2.0
        assert action_ratio(det3.eval_policy, det3.behaviour_policy, 3, LEFT) == 0.0

    def test_support_violation(self, det3):
        right_only = det3.eval_policy
        with pytest.raises(SupportViolationError) as info:
            action_ratio(det3.behaviour_policy, right_only, 3, LEFT)
        assert (info.value.state, info.value.action) == (3, LEFT)

    def test_behaviour_support(self, det3):
        assert behaviour_support(det3.behaviour_policy) == 0.5
        assert behaviour_support(det3.eval_policy, states=[3]) == 0.0


class TestSerialisation:
    """Tests for the JSONL trajectory log and MDP JSON."""

    def test_jsonl_round_trip(self, stoch3, tmp_path):
        batch = sample_batch(stoch3.mdp, stoch3.behaviour_policy, 10, 5)
        path = tmp_path / "batch.jsonl"
        write_trajectories_jsonl(batch, path)
        loaded = read_trajectories_jsonl(path)
        assert loaded.trajectories == batch.trajectories
        assert loaded.base_seed == 5

    def test_truncated_flag_defaults_from_terminated(self):
        text = '{"seed": 3, "terminated": false, "steps": [[1, 0, -1.0]]}\n'
        batch = read_trajectories_jsonl(io.StringIO(text))
        assert batch.trajectories[0].truncated

    def test_malformed_line(self):
        with pytest.raises(TrajectoryFormatError, match="line 2"):
            read_trajectories_jsonl(
                io.StringIO('{"seed": 0, "terminated": true, "steps": [[0, 0, 1]]}\n{"seed": 1}\n')
            )

    def test_empty_log(self):
        with pytest.raises(TrajectoryFormatError):
            read_trajectories_jsonl(io.StringIO("\n"))

    def test_check_batch_accepts_sampled_log(self, stoch3):
        stoch3.mdp.check_batch(sample_batch(stoch3.mdp, stoch3.behaviour_policy, 20, 0))

    @pytest.mark.parametrize(
        "step, message",
        [
            ("[-1, 1, 3.0]", "state -1"),
            ("[99, 1, -1.0]", "state 99"),
            ("[3, 2, -1.0]", "action 2"),
            ("[6, 1, -1.0]", "terminal state 6"),
        ],
    )
    def test_check_batch_rejects_bad_steps(self, det3, step, message):
        text = '{"seed": 0, "terminated": true, "steps": [[3, 1, -1.0], ' + step + "]}\n"
        batch = read_trajectories_jsonl(io.StringIO(text))
        with pytest.raises(TrajectoryFormatError, match=message):
            det3.mdp.check_batch(batch)

    def test_mdp_json(self, stoch3):
        loaded = mdp_from_json(mdp_to_json(stoch3.mdp))
        assert np.array_equal(loaded.transition, stoch3.mdp.transition)
        assert np.array_equal(loaded.reward, stoch3.mdp.reward)
        assert loaded.terminal_states == stoch3.mdp.terminal_states
        assert loaded.horizon_cap == stoch3.mdp.horizon_cap

    def test_mdp_json_missing_key(self):
        with pytest.raises(TrajectoryFormatError):
            mdp_from_json('{"num_states": 2}')
