import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from drsisdp.drmpc import AmbiguitySet, ConstraintSpec, CostSpec, DrmpcSpec, QuadRow, SystemModel

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

A4 = np.array([[1.02, -0.1], [0.1, 0.98]])
B4 = np.array([[0.10, 0.0], [0.05, 0.01]])
C4 = 0.04 * np.eye(2)
D4 = np.array([[0.04, 0.0], [-0.04, 0.008]])
Q4 = np.diag([2.0, 1.0])
R4 = np.diag([5.0, 20.0])
SF4 = np.array([[41.0331, -5.7929], [-5.7929, 54.3889]])
X4 = np.array([0.1, 1.2])


def two_state_spec(sigma_hat=1.04, gamma=1.2, N=5, alpha=45.0, beta=2.3):
    model = SystemModel(A4, B4, C4, D4)
    cost = CostSpec(Q4, R4, SF4, N)
    cons = ConstraintSpec(state=[QuadRow(np.zeros((2, 2)), [-2.0, 1.0], beta)], S_f=SF4, alpha=alpha)
    return DrmpcSpec(model, cost, cons, AmbiguitySet(np.atleast_1d(sigma_hat), gamma))


def two_channel_spec(N=3):
    """Same plant with a second, state-multiplicative noise channel."""
    model = SystemModel(A4, B4, np.array([C4, 0.02 * np.eye(2)]), np.array([D4, np.zeros((2, 2))]))
    cost = CostSpec(Q4, R4, SF4, N)
    cons = ConstraintSpec(state=[QuadRow(np.zeros((2, 2)), [-2.0, 1.0], 2.3)], S_f=SF4, alpha=45.0)
    return DrmpcSpec(model, cost, cons, AmbiguitySet([1.0, 0.8], 1.2))


@pytest.fixture(scope="session")
def spec4():
    return two_state_spec()


@pytest.fixture(scope="session")
def spec2ch():
    return two_channel_spec()
