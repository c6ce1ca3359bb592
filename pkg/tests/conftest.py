"""Shared fixtures for the StateIS tests."""

import pytest

from stateis.lift import LEFT, RIGHT, LiftDomainSpec, build_lift_domain
from stateis.mdp import Trajectory, TrajectoryBatch, sample_batch


@pytest.fixture
def det3():
    """Deterministic lift domain with B = 3 (size 7, lift states 2 and 4)."""
    return build_lift_domain(LiftDomainSpec.deterministic(3))


@pytest.fixture
def stoch3():
    return build_lift_domain(LiftDomainSpec.stochastic(3, noise=0.1))


@pytest.fixture
def stoch4():
    return build_lift_domain(LiftDomainSpec.stochastic(4, noise=0.1))


@pytest.fixture
def det3_batch(det3):
    return sample_batch(det3.mdp, det3.behaviour_policy, 200, 7)


@pytest.fixture
def hand_batch():
    """
    Two B = 3 episodes: straight to the right bound, and straight to the left one.

    Under the deterministic evaluation policy the first has ratio 2 at every
    step and the second ratio 0.
    """
    right = Trajectory(((3, RIGHT, -1.0), (4, RIGHT, -1.0), (5, RIGHT, 3.0)), True, False, 0)
    left = Trajectory(((3, LEFT, -1.0), (2, LEFT, -1.0), (1, LEFT, -3.0)), True, False, 1)
    return TrajectoryBatch((right, left), 0)

