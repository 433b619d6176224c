import warnings

import numpy as np
import pytest

from starisac.scenario import Scenario, gen_channels

warnings.filterwarnings("ignore", module="cvxpy")


def make_rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def rand_hermitian(rng, n, scale=1.0):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (A + np.conj(A).T)


def rand_psd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (A @ np.conj(A).T)


def rand_cvec(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


@pytest.fixture(scope="session")
def tiny_scenario():
    """Small-but-complete scene used by the solver-level unit tests."""
    return Scenario(n_antennas=3, n_elements=4, n_users=2, n_scatterers=1,
                    p_max=1.0, rate_threshold=(0.5, 0.5), seed=11,
                    epsilon_outer=1e-3)


@pytest.fixture(scope="session")
def tiny_channels(tiny_scenario):
    return gen_channels(tiny_scenario)
