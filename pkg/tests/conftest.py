import numpy as np
import pytest

import vpcc
from vpcc.moments import RandomEntry, RandomMatrixModel, SystemSpec
from vpcc.stochastics import finite_support


@pytest.fixture(scope="session")
def two_bus_cfg():
    return vpcc.load_two_bus()


@pytest.fixture(scope="session")
def two_bus_spec(two_bus_cfg):
    return two_bus_cfg.system_spec()


def coin_entry() -> RandomEntry:
    """Support {0, 2} with equal probability: mean 1, variance 1."""
    return RandomEntry.from_distribution(finite_support([0.0, 2.0], [0.5, 0.5]))


def scalar_iid_spec(horizon: int = 2) -> SystemSpec:
    """n = 1 chain x(t+1) = a(t) x(t) + u(t) with iid coin entries."""
    model = RandomMatrixModel(((coin_entry(),),))
    return SystemSpec(
        horizon=horizon,
        a_models=tuple(model for _ in range(horizon)),
        B=np.array([[1.0]]),
        x0=np.array([1.0]),
        A_u=np.array([[1.0], [-1.0]]),
        b_u=np.array([10.0, 10.0]),
    )


def deterministic_spec(A, B, x0, horizon, box=10.0) -> SystemSpec:
    A = np.asarray(A, dtype=float)
    m = np.asarray(B).shape[1]
    model = RandomMatrixModel.deterministic(A)
    return SystemSpec(
        horizon=horizon,
        a_models=tuple(model for _ in range(horizon)),
        B=B,
        x0=x0,
        A_u=np.vstack([np.eye(m), -np.eye(m)]),
        b_u=np.full(2 * m, box),
    )
