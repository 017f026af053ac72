"""Common test fixtures and settings for ommhp tests."""

import numpy as np
import pytest

from ommhp.hawkes_model import ClusterParams, EventSequence, MixtureModel
from ommhp.simulator import SHARED_DECAY, d1_scenario, simulate_mixture


@pytest.fixture
def rng():
    """Create a seeded random generator."""
    return np.random.default_rng(20240611)


@pytest.fixture
def bivariate_cluster():
    """Create a stable two-type cluster with the shared decay."""
    return ClusterParams(
        base_rates=[0.3, 0.2],
        amplitudes=[[0.2, 0.1], [0.1, 0.2]],
        decays=SHARED_DECAY,
    )


@pytest.fixture
def two_cluster_model(bivariate_cluster):
    """Create a two-cluster mixture whose second cluster runs hotter."""
    hot = ClusterParams(
        base_rates=[2.8, 1.6],
        amplitudes=[[0.6, 0.2], [0.2, 0.6]],
        decays=SHARED_DECAY,
    )
    return MixtureModel(clusters=[bivariate_cluster, hot], prior=[0.4, 0.6])


@pytest.fixture
def make_sequence():
    """Return a factory for random sorted sequences with continuous event times."""
    def factory(rng, num_events, num_types, horizon):
        times = np.sort(rng.uniform(0.0, horizon, size=num_events))
        types = rng.integers(0, num_types, size=num_events)
        return EventSequence(times=times, types=types, horizon=horizon)

    return factory


@pytest.fixture
def make_cluster():
    """Return a factory for random clusters with per-entry decays."""
    def factory(rng, num_types):
        return ClusterParams(
            base_rates=rng.uniform(0.2, 1.5, size=num_types),
            amplitudes=rng.uniform(0.0, 0.8, size=(num_types, num_types)),
            decays=rng.uniform(0.5, 4.0, size=(num_types, num_types)),
        )

    return factory


@pytest.fixture(scope="module")
def small_d1_dataset():
    """Create a short two-cluster dataset with two sequences per cluster."""
    return simulate_mixture(d1_scenario(sequences_per_cluster=2, horizon=100.0, seed=7))
