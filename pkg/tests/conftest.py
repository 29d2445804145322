import numpy as np
import pytest

from config import DEFAULT_SEED, DEFAULT_T
from radar.network import AgentSpec, simulate, tri_radar_network
from revealed.dataset import Dataset


@pytest.fixture(scope="session")
def tri_network():
    return tri_radar_network()


@pytest.fixture(scope="session")
def coordinated(tri_network):
    """Three-radar dataset (T=10) and the hidden bundles that produced it."""
    return simulate(tri_network, DEFAULT_T, DEFAULT_SEED)


@pytest.fixture
def garp_cycle():
    """One fully observed agent whose two choices are each strictly revealed preferred to the other."""
    return Dataset.from_arrays(
        alphas=[[1.0, 2.0], [1.0, 4.0]],
        betas=[[2.0, 0.0], [0.0, 0.8]],
        beta_hats=[[[2.0, 0.0]], [[0.0, 0.8]]],
    )


@pytest.fixture
def consistent_pair():
    """Two observations at equal prices: the cheaper choice is simply not affordable-better."""
    return Dataset.from_arrays(
        alphas=[[1.0, 1.0], [1.0, 1.0]],
        betas=[[2.0, 0.0], [0.0, 1.0]],
        beta_hats=[[[2.0, 0.0]], [[0.0, 1.0]]],
    )


@pytest.fixture
def cobb_douglas_data():
    """Factory for single-agent, fully observed data from a Cobb-Douglas maximiser."""

    def make(T: int, seed: int, exponents=(1.0, 1.0), budget: float = 1.0) -> Dataset:
        rng = np.random.default_rng(seed)
        agent = AgentSpec("powerprod", tuple(exponents))
        alphas = rng.uniform(0.1, 1.1, size=(T, len(exponents)))
        spend = budget * rng.uniform(0.5, 1.5, size=T)
        bundles = np.array([agent.demand(a, m) for a, m in zip(alphas, spend)])
        return Dataset.from_arrays(alphas, bundles, bundles[:, None, :])

    return make


@pytest.fixture
def random_full_observation():
    """Factory for single-agent, fully observed data with uniform random bundles."""

    def make(T: int, seed: int, n_goods: int = 2) -> Dataset:
        rng = np.random.default_rng(seed)
        alphas = rng.uniform(0.1, 1.1, size=(T, n_goods))
        bundles = rng.uniform(0.0, 1.0, size=(T, n_goods))
        return Dataset.from_arrays(alphas, bundles, bundles[:, None, :])

    return make
