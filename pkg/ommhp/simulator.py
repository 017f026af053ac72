"""
Simulation of Hawkes processes and labeled mixture datasets.

Sequences are drawn with Ogata thinning. Every sequence gets its own PCG64
stream spawned from one SeedSequence, so a dataset is a pure function of its
scenario.
"""

import logging
from typing import Callable, Dict, List, NamedTuple, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ResourceLimitError
from .hawkes_model import ClusterParams, EventSequence, MixtureModel, spectral_radius
from .logging_utils import log_execution_time

logger = logging.getLogger(__name__)

DEFAULT_MAX_EVENTS = 10_000_000
SHARED_DECAY = 3.1

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


class Stationarity(NamedTuple):
    spectral_radius: float
    stable: bool


class MixtureScenario(BaseModel):
    """Recipe for a labeled mixture dataset"""
    clusters: List[ClusterParams]
    sequences_per_cluster: int = Field(ge=1)
    horizon: float = Field(gt=0)
    seed: int = Field(0, ge=0, lt=2**64)
    max_events: int = Field(DEFAULT_MAX_EVENTS, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if not self.clusters:
            raise ValueError("a scenario needs at least one cluster")
        if len({c.num_types for c in self.clusters}) != 1:
            raise ValueError("all clusters must share the number of event types")
        return self

    @property
    def num_types(self) -> int:
        return self.clusters[0].num_types

    def mixture(self) -> MixtureModel:
        return MixtureModel.uniform(self.clusters)


class LabeledDataset(BaseModel):
    """Event sequences with their ground-truth cluster labels"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sequences: List[EventSequence]
    labels: List[int]
    ids: Optional[List[str]] = None

    @model_validator(mode="after")
    def _check(self):
        if len(self.labels) != len(self.sequences):
            raise ValueError(f"{len(self.labels)} labels for {len(self.sequences)} sequences")
        if self.ids is None:
            self.ids = [f"s{n:04d}" for n in range(len(self.sequences))]
        elif len(self.ids) != len(self.sequences):
            raise ValueError(f"{len(self.ids)} ids for {len(self.sequences)} sequences")
        elif len(set(self.ids)) != len(self.ids):
            raise ValueError("sequence ids must be unique")
        return self

    @property
    def horizon(self) -> float:
        return self.sequences[0].horizon

    @property
    def num_types(self) -> int:
        return max((int(s.types.max()) + 1 for s in self.sequences if len(s)), default=1)

    def __len__(self) -> int:
        return len(self.sequences)


def _as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def simulate_hawkes(
    cluster: ClusterParams,
    horizon: float,
    seed: SeedLike,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> EventSequence:
    """
    Draw one sequence on [0, horizon] by Ogata thinning

    Args:
        cluster: Hawkes parameters
        horizon: Observation horizon T > 0
        seed: Integer seed, SeedSequence or Generator
        max_events: Abort once more events than this have been generated

    Returns:
        The simulated EventSequence

    Raises:
        ResourceLimitError: If the event cap is exceeded
    """
    rng = _as_generator(seed)
    mu = cluster.base_rates
    a = cluster.amplitudes
    b = cluster.decays

    # sums[s, p]: exponential sums over accepted events, including one at t
    sums = np.zeros_like(a)
    times: List[float] = []
    types: List[int] = []
    t = 0.0
    while True:
        upper = mu.sum() + np.sum(a * sums)
        w = rng.exponential(1.0 / upper)
        t += w
        if t > horizon:
            break
        sums *= np.exp(-b * w)
        lam = mu + np.sum(a * sums, axis=0)
        u = rng.uniform() * upper
        total = lam.sum()
        if u >= total:
            continue
        p = min(int(np.searchsorted(np.cumsum(lam), u, side="right")), lam.size - 1)
        times.append(t)
        types.append(p)
        sums[p] += 1.0
        if len(times) > max_events:
            raise ResourceLimitError(f"simulation exceeded {max_events} events before t={t:.3f}")

    return EventSequence(times=times, types=types, horizon=horizon)


def stationarity_check(cluster: ClusterParams) -> Stationarity:
    """Spectral radius of the branching matrix a / b and whether it is below 1"""
    radius = spectral_radius(cluster)
    return Stationarity(radius, radius < 1.0)


@log_execution_time
def simulate_mixture(scenario: MixtureScenario) -> LabeledDataset:
    """
    Simulate sequences_per_cluster sequences from every cluster

    Args:
        scenario: The mixture recipe

    Returns:
        LabeledDataset ordered cluster by cluster; sequence j uses the j-th
        child of SeedSequence(scenario.seed)
    """
    for k, cluster in enumerate(scenario.clusters):
        radius, stable = stationarity_check(cluster)
        if not stable:
            logger.warning(f"Cluster {k} is not stationary (spectral radius {radius:.3f})")

    n = scenario.sequences_per_cluster
    children = np.random.SeedSequence(scenario.seed).spawn(len(scenario.clusters) * n)
    sequences, labels = [], []
    for k, cluster in enumerate(scenario.clusters):
        for i in range(n):
            seq = simulate_hawkes(cluster, scenario.horizon, children[k * n + i], scenario.max_events)
            sequences.append(seq)
            labels.append(k)
        logger.debug(f"Cluster {k}: {sum(len(s) for s in sequences[k * n:])} events")

    logger.info(f"Simulated {len(sequences)} sequences with {sum(len(s) for s in sequences)} events")
    return LabeledDataset(sequences=sequences, labels=labels)


def d1_scenario(
    sequences_per_cluster: int = 10,
    horizon: float = 1000.0,
    seed: int = 0,
    decay: float = SHARED_DECAY,
) -> MixtureScenario:
    """Two clusters of bivariate processes with a large base-rate gap"""
    clusters = [
        ClusterParams(base_rates=[0.3, 0.2], amplitudes=[[0.2, 0.1], [0.1, 0.2]], decays=decay),
        ClusterParams(base_rates=[2.8, 1.6], amplitudes=[[0.6, 0.2], [0.2, 0.6]], decays=decay),
    ]
    return MixtureScenario(clusters=clusters, sequences_per_cluster=sequences_per_cluster, horizon=horizon, seed=seed)


def d2_scenario(
    sequences_per_cluster: int = 10,
    horizon: float = 1000.0,
    seed: int = 0,
    decay: float = SHARED_DECAY,
) -> MixtureScenario:
    """Three clusters of bivariate processes"""
    clusters = [
        ClusterParams(base_rates=[0.3, 0.2], amplitudes=[[0.2, 0.1], [0.1, 0.2]], decays=decay),
        ClusterParams(base_rates=[2.8, 1.6], amplitudes=[[0.6, 0.2], [0.2, 0.6]], decays=decay),
        ClusterParams(base_rates=[1.4, 0.8], amplitudes=[[0.4, 0.0], [0.0, 0.6]], decays=decay),
    ]
    return MixtureScenario(clusters=clusters, sequences_per_cluster=sequences_per_cluster, horizon=horizon, seed=seed)


def scaling_scenario(
    num_clusters: int,
    num_types: int,
    sequences_per_cluster: int,
    horizon: float = 200.0,
    seed: int = 0,
    decay: float = SHARED_DECAY,
) -> MixtureScenario:
    """Stable K-cluster, P-type scenario with geometrically spaced base rates"""
    clusters = []
    for k in range(num_clusters):
        base = 0.3 * 2.0 ** k * np.linspace(1.0, 0.6, num_types)
        amplitudes = np.full((num_types, num_types), 0.3 / max(num_types, 1))
        np.fill_diagonal(amplitudes, 0.6)
        clusters.append(ClusterParams(base_rates=base, amplitudes=amplitudes, decays=decay))
    return MixtureScenario(clusters=clusters, sequences_per_cluster=sequences_per_cluster, horizon=horizon, seed=seed)


SCENARIOS: Dict[str, Callable[..., MixtureScenario]] = {
    "d1": d1_scenario,
    "d2": d2_scenario,
}
