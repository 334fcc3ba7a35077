from __future__ import annotations

import numpy as np
import pytest

from varmppi.model import ACROBOT_MASK, GoalSpec, ModelParams, State


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def acrobot_params():
    return ModelParams(actuation_mask=ACROBOT_MASK)


@pytest.fixture(scope="session")
def point_mass_params():
    # unit point masses at the link ends: joint-referred inertia m r^2
    return ModelParams(m1=1.0, m2=1.0, l1=1.0, l2=1.0, r1=1.0, r2=1.0,
                       I1=1.0, I2=1.0, b1=0.0, b2=0.0, g=9.81)


@pytest.fixture(scope="session")
def undamped_params():
    return ModelParams(b1=0.0, b2=0.0)


@pytest.fixture(scope="session")
def goal():
    return GoalSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_states(rng, n, v_max=10.0):
    qs = rng.uniform(-np.pi, np.pi, (n, 2))
    vs = rng.uniform(-v_max, v_max, (n, 2))
    return [State(q=qs[i], v=vs[i]) for i in range(n)]
