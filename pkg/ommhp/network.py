"""
Online learning of Hawkes processes on the edges of a network.

Every node carries a latent community; the events on edge (i, j) follow the
Hawkes process of the community pair (z_i, z_j). Responsibilities live on
node groups: by default every node is its own group, and nodes that share a
group share one latent community (the bipartite reduction of a sequence
dataset ties each node to its duplicate).
"""

import logging
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import xlogy

from .discretizer import IntervalBatch, stream_intervals
from .errors import InvalidInputError, NumericError, OMMHPError, SequencingError
from .hawkes_model import (
    ClusterParams,
    DecayState,
    EventSequence,
    MixtureModel,
    advance_decay_arrays,
    intensity,
)
from .learner import (
    FitTrajectory,
    IntervalIntensities,
    IntervalRecord,
    LearnerConfig,
    StepSchedule,
    ascent_direction,
    buffered_window,
    check_runaway,
    em_update,
    initial_responsibilities,
    interval_log_terms,
    normalize_log_weights,
    observe_rate_scale,
    sgd_update_cluster,
)
from .logging_utils import log_execution_time

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]


def _merge_sequences(first: EventSequence, second: EventSequence) -> EventSequence:
    times = np.concatenate((first.times, second.times))
    types = np.concatenate((first.types, second.types))
    order = np.argsort(times, kind="stable")
    return EventSequence(times=times[order], types=types[order], horizon=first.horizon)


class NetworkEventLog(BaseModel):
    """Directed edges with one event sequence each"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    num_nodes: int = Field(ge=0)
    edges: List[Edge] = Field(default_factory=list)
    sequences: List[EventSequence] = Field(default_factory=list)
    horizon: Optional[float] = Field(None, gt=0)
    node_groups: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check(self):
        if len(self.edges) != len(self.sequences):
            raise ValueError(f"{len(self.sequences)} sequences for {len(self.edges)} edges")
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("edges must be unique")
        for i, j in self.edges:
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise ValueError(f"edge ({i}, {j}) references a node outside [0, {self.num_nodes})")
        horizons = {s.horizon for s in self.sequences}
        if len(horizons) > 1:
            raise ValueError(f"edge sequences have mixed horizons: {sorted(horizons)}")
        if horizons:
            if self.horizon is None:
                self.horizon = horizons.pop()
            elif horizons != {self.horizon}:
                raise ValueError(f"edge sequences do not match horizon {self.horizon}")
        if self.node_groups is None:
            self.node_groups = list(range(self.num_nodes))
        elif len(self.node_groups) != self.num_nodes:
            raise ValueError(f"{len(self.node_groups)} node groups for {self.num_nodes} nodes")
        elif self.node_groups and sorted(set(self.node_groups)) != list(range(max(self.node_groups) + 1)):
            raise ValueError("node groups must be numbered 0 .. G-1")
        return self

    @classmethod
    def from_edge_sequences(
        cls,
        num_nodes: int,
        edge_sequences: Union[Mapping[Edge, EventSequence], Iterable[Tuple[Edge, EventSequence]]],
        undirected: bool = False,
        node_groups: Optional[List[int]] = None,
    ) -> "NetworkEventLog":
        """
        Build a log from edges and their sequences

        Sequences that land on the same edge are merged; undirected edges are
        stored as (min, max).
        """
        pairs = edge_sequences.items() if isinstance(edge_sequences, Mapping) else edge_sequences
        merged: Dict[Edge, EventSequence] = {}
        for (i, j), seq in pairs:
            key = (min(i, j), max(i, j)) if undirected else (i, j)
            merged[key] = _merge_sequences(merged[key], seq) if key in merged else seq
        edges = sorted(merged)
        return cls(num_nodes=num_nodes, edges=edges, sequences=[merged[e] for e in edges], node_groups=node_groups)

    @property
    def num_groups(self) -> int:
        return max(self.node_groups) + 1 if self.node_groups else 0

    @property
    def edge_groups(self) -> np.ndarray:
        """E x 2 array of the (source, target) node groups of every edge"""
        groups = np.asarray(self.node_groups, dtype=np.int64)
        if not self.edges:
            return np.empty((0, 2), dtype=np.int64)
        return groups[np.asarray(self.edges, dtype=np.int64)]


class PairClusterModel(BaseModel):
    """Hawkes parameters and prior for every ordered pair of communities"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: List[List[ClusterParams]]
    prior: np.ndarray

    @field_validator("prior", mode="before")
    @classmethod
    def _coerce_prior(cls, value):
        return np.array(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check(self):
        k = len(self.params)
        if k == 0 or any(len(row) != k for row in self.params):
            raise ValueError("params must be a nonempty K x K grid")
        if self.prior.shape != (k, k):
            raise ValueError(f"prior must have shape ({k}, {k})")
        if np.any(self.prior < 0) or abs(self.prior.sum() - 1.0) > 1e-12:
            raise ValueError("pair prior must lie on the simplex")
        if len({c.num_types for row in self.params for c in row}) != 1:
            raise ValueError("all blocks must share the number of event types")
        return self

    @classmethod
    def from_mixture(cls, model: MixtureModel) -> "PairClusterModel":
        """Pair model whose diagonal block (k, k) is cluster k and whose prior is diag(pi)"""
        params = [[source.copy_params() for _ in model.clusters] for source in model.clusters]
        return cls(params=params, prior=np.diag(model.prior))

    @property
    def num_clusters(self) -> int:
        return len(self.params)

    @property
    def num_types(self) -> int:
        return self.params[0][0].num_types


def network_intensity(
    model: PairClusterModel,
    edge_history: EventSequence,
    k1: int,
    k2: int,
    target_type: int,
    t: float,
) -> float:
    """
    Intensity of one edge's events under the community pair (k1, k2)

    Raises:
        IndexError: If k1, k2 or target_type is out of range
    """
    for name, k in (("k1", k1), ("k2", k2)):
        if not 0 <= k < model.num_clusters:
            raise IndexError(f"{name}={k} out of range for K={model.num_clusters}")
    return intensity(model.params[k1][k2], edge_history, target_type, t)


def pair_weights(alpha: np.ndarray, edge_groups: np.ndarray) -> np.ndarray:
    """
    q(z_i = k1, z_j = k2) for every edge, shape (E, K, K)

    Edges whose endpoints share a group get diag(alpha_g).
    """
    k = alpha.shape[1]
    if edge_groups.shape[0] == 0:
        return np.zeros((0, k, k))
    src, dst = edge_groups[:, 0], edge_groups[:, 1]
    weights = alpha[src][:, :, None] * alpha[dst][:, None, :]
    tied = src == dst
    if np.any(tied):
        weights[tied] = alpha[src[tied]][:, :, None] * np.eye(k)[None]
    return weights


def network_elbo(
    model: PairClusterModel,
    responsibilities: np.ndarray,
    log_evidence: np.ndarray,
    edge_groups: np.ndarray,
) -> float:
    """
    Edge-sum ELBO of the network model

    Args:
        model: Pair parameters; only the prior enters here
        responsibilities: G x K node-group responsibilities
        log_evidence: E x K x K accumulated interval log-likelihoods per edge
        edge_groups: E x 2 node groups of the edge endpoints

    Returns:
        sum_e sum_{k1,k2} W (log R + log pi - log W) with W the pair weights
    """
    weights = pair_weights(responsibilities, edge_groups)
    return float(
        np.sum(weights * log_evidence)
        + np.sum(xlogy(weights, model.prior[None]))
        - np.sum(xlogy(weights, weights))
    )


class NetworkLearnerConfig(LearnerConfig):
    """Learner settings plus the number of coordinate-ascent sweeps per interval"""
    sweeps: int = Field(1, ge=1)


class NetworkLearnerState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: PairClusterModel
    alpha: np.ndarray
    prev_alpha: np.ndarray
    log_evidence: np.ndarray
    decay_states: List[List[List[DecayState]]]
    edge_groups: np.ndarray
    incidence: List[List[int]]
    interval_index: int = Field(0, ge=0)
    current_time: float = 0.0
    rate_scale: float = 0.0
    schedule: StepSchedule
    history_times: List[np.ndarray] = Field(default_factory=list)
    history_types: List[np.ndarray] = Field(default_factory=list)

    @property
    def num_edges(self) -> int:
        return int(self.edge_groups.shape[0])

    @property
    def num_clusters(self) -> int:
        return int(self.alpha.shape[1])

    def pair_weights(self, previous: bool = False) -> np.ndarray:
        return pair_weights(self.prev_alpha if previous else self.alpha, self.edge_groups)


def incidence_lists(edge_groups: np.ndarray, num_groups: int) -> List[List[int]]:
    incidence: List[List[int]] = [[] for _ in range(num_groups)]
    for e, (src, dst) in enumerate(edge_groups):
        incidence[src].append(e)
        if dst != src:
            incidence[dst].append(e)
    return incidence


def initialize_network_state(
    config: NetworkLearnerConfig,
    log: NetworkEventLog,
    first_batch: IntervalBatch,
    initial_model: Optional[PairClusterModel] = None,
    initial_alpha: Optional[np.ndarray] = None,
) -> NetworkLearnerState:
    """Network analogue of learner.initialize_state; the pair prior starts uniform over K x K"""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    k, p = config.num_clusters, config.num_types

    if initial_model is None:
        rates = np.maximum(first_batch.counts.mean(axis=0) / first_batch.length, config.mu_min)
        decay = config.decay if config.learn_decay == "fixed" else 1.0
        params = []
        for _ in range(k):
            row = []
            for _ in range(k):
                jitter = rng.uniform(1.0 - config.rate_jitter, 1.0 + config.rate_jitter, size=p)
                row.append(
                    ClusterParams(
                        base_rates=np.maximum(rates * jitter, config.mu_min),
                        amplitudes=np.full((p, p), 0.1 * decay / p),
                        decays=np.full((p, p), decay),
                    )
                )
            params.append(row)
        model = PairClusterModel(params=params, prior=np.full((k, k), 1.0 / (k * k)))
    else:
        if initial_model.num_clusters != k or initial_model.num_types != p:
            raise InvalidInputError(f"initial pair model has K={initial_model.num_clusters}, P={initial_model.num_types}")
        model = initial_model

    if initial_alpha is None:
        alpha = initial_responsibilities(log.num_groups, k, config.alpha_jitter, rng)
    else:
        alpha = np.array(initial_alpha, dtype=np.float64)
        if alpha.shape != (log.num_groups, k):
            raise InvalidInputError(f"initial node responsibilities have shape {alpha.shape}")

    edge_groups = log.edge_groups
    retain = config.retains_history
    return NetworkLearnerState(
        model=model,
        alpha=alpha,
        prev_alpha=alpha.copy(),
        log_evidence=np.zeros((len(log.edges), k, k)),
        decay_states=[[[DecayState.empty(p) for _ in range(k)] for _ in range(k)] for _ in log.edges],
        edge_groups=edge_groups,
        incidence=incidence_lists(edge_groups, log.num_groups),
        schedule=config.schedule,
        history_times=[np.empty(0) for _ in log.edges] if retain else [],
        history_types=[np.empty(0, dtype=np.int64) for _ in log.edges] if retain else [],
    )


def network_interval_intensities(state: NetworkLearnerState, batch: IntervalBatch) -> IntervalIntensities:
    """
    Advance every (edge, k1, k2) decay state to the end of the batch

    Returns:
        IntervalIntensities with intensities of shape (E, K, K, P) and kernel
        and lag sums of shape (E, K, K, P, P)
    """
    if batch.interval_index != state.interval_index + 1:
        raise SequencingError(
            f"expected interval {state.interval_index + 1}, got {batch.interval_index}",
            interval=batch.interval_index,
        )
    k = state.num_clusters
    p = state.model.num_types
    lam = np.empty((state.num_edges, k, k, p))
    sums = np.empty((state.num_edges, k, k, p, p))
    lags = np.empty_like(sums)

    for e in range(state.num_edges):
        times, types = batch.times[e], batch.types[e]
        for k1 in range(k):
            for k2 in range(k):
                block = state.model.params[k1][k2]
                advanced = advance_decay_arrays(state.decay_states[e][k1][k2], block.decays, times, types, batch.end)
                state.decay_states[e][k1][k2] = advanced
                sums[e, k1, k2] = advanced.sums
                lags[e, k1, k2] = advanced.lag_sums
                lam[e, k1, k2] = advanced.intensities(block)
        if state.history_times:
            state.history_times[e] = np.concatenate((state.history_times[e], times))
            state.history_types[e] = np.concatenate((state.history_types[e], types))

    state.interval_index = batch.interval_index
    state.current_time = batch.end
    return IntervalIntensities(batch.interval_index, batch.end, batch.length, lam, sums, lags)


def update_node_responsibilities(state: NetworkLearnerState, group: int) -> np.ndarray:
    """
    Coordinate-ascent update of one node group, holding every other group fixed

    The new row is softmax(c / m), where c collects the expected log-evidence
    and log-prior of every incident edge and m is the number of incident edges,
    i.e. the number of entropy terms the group appears in.

    Raises:
        NumericError: If the accumulated logits are not finite
    """
    k = state.num_clusters
    prior = state.model.prior
    with np.errstate(divide="ignore"):
        log_prior_diag = np.log(np.diagonal(prior))
    logits = np.zeros(k)
    multiplicity = 0
    for e in state.incidence[group]:
        src, dst = state.edge_groups[e]
        evidence = state.log_evidence[e]
        if src == dst:
            logits = logits + (np.diagonal(evidence) + log_prior_diag)
        elif src == group:
            logits = logits + (evidence @ state.alpha[dst] + np.sum(xlogy(state.alpha[dst][None, :], prior), axis=1))
        else:
            logits = logits + (state.alpha[src] @ evidence + np.sum(xlogy(state.alpha[src][:, None], prior), axis=0))
        multiplicity += 1

    if multiplicity == 0:
        return state.alpha[group]
    if np.any(np.isnan(logits)) or not np.any(np.isfinite(logits)):
        raise NumericError(
            f"non-finite accumulator for node group {group}",
            payload={"group": group, "logits": logits.tolist()},
            interval=state.interval_index,
        )
    state.alpha[group] = normalize_log_weights(logits / multiplicity)
    return state.alpha[group]


def network_e_step(state: NetworkLearnerState, counts: np.ndarray, intensities: IntervalIntensities, sweeps: int = 1) -> np.ndarray:
    """
    Accumulate per-edge log-evidence, sweep the node groups in index order, then refresh the pair prior

    Args:
        state: Network learner state; mutated in place
        counts: E x P interval counts
        intensities: Output of network_interval_intensities for the same interval
        sweeps: Number of coordinate-ascent sweeps

    Returns:
        The new G x K responsibilities
    """
    lam = intensities.intensities
    if not np.all(lam > 0):
        raise NumericError(
            "non-positive intensity in network E-step",
            payload={"min_intensity": float(np.nanmin(lam)) if lam.size else None},
            interval=intensities.interval_index,
        )
    log_evidence = state.log_evidence + interval_log_terms(counts[:, None, None, :], lam, intensities.length)
    if not np.all(np.isfinite(log_evidence)):
        raise NumericError("non-finite edge log evidence", interval=intensities.interval_index)
    state.log_evidence = log_evidence

    state.prev_alpha = state.alpha
    state.alpha = state.alpha.copy()
    for _ in range(sweeps):
        for group in range(state.alpha.shape[0]):
            update_node_responsibilities(state, group)

    if state.num_edges:
        prior = state.pair_weights().sum(axis=0) / state.num_edges
        state.model = PairClusterModel(params=state.model.params, prior=prior)
    return state.alpha


def network_m_step_sgd(
    state: NetworkLearnerState,
    counts: np.ndarray,
    intensities: IntervalIntensities,
    eta: float,
    config: LearnerConfig,
) -> PairClusterModel:
    """
    Projected gradient step on every block, weighted by the previous pair weights

    Raises:
        NumericError: If a gradient is not finite or a block runs away
    """
    weights = state.pair_weights(previous=True)
    limit = config.runaway_factor * observe_rate_scale(state, counts, intensities.length)
    params = []
    for k1, row in enumerate(state.model.params):
        new_row = []
        for k2, block in enumerate(row):
            direction = ascent_direction(
                block, weights[:, k1, k2], counts, intensities.intensities[:, k1, k2],
                intensities.kernel_sums[:, k1, k2], intensities.lag_sums[:, k1, k2], intensities.length,
                config.preconditioner,
            )
            if not direction.is_finite():
                raise NumericError(
                    "non-finite gradient",
                    payload={"block": [k1, k2]},
                    interval=intensities.interval_index,
                )
            updated = sgd_update_cluster(block, direction, eta, config)
            check_runaway(updated, limit, intensities.interval_index, block=[k1, k2])
            new_row.append(updated)
        params.append(new_row)
    state.model = PairClusterModel(params=params, prior=state.model.prior)
    return state.model


def network_m_step_em(state: NetworkLearnerState, config: LearnerConfig) -> PairClusterModel:
    """Branching-structure EM for every block on the buffered edge events"""
    buffered = buffered_window(state.history_times, state.history_types, state.current_time, config.em_window)
    if sum(len(s) for s in buffered) == 0:
        return state.model
    weights = state.pair_weights(previous=True)
    params = []
    for k1, row in enumerate(state.model.params):
        new_row = []
        for k2, block in enumerate(row):
            updated = block
            for _ in range(config.em_iterations):
                updated = em_update(buffered, weights[:, k1, k2], updated, config.mu_min)
            new_row.append(updated)
        params.append(new_row)
    state.model = PairClusterModel(params=params, prior=state.model.prior)
    return state.model


def _rebuild_network_decay_states(state: NetworkLearnerState) -> None:
    p = state.model.num_types
    for e in range(state.num_edges):
        for k1, row in enumerate(state.model.params):
            for k2, block in enumerate(row):
                state.decay_states[e][k1][k2] = advance_decay_arrays(
                    DecayState.empty(p), block.decays, state.history_times[e], state.history_types[e], state.current_time,
                )


def process_network_interval(state: NetworkLearnerState, batch: IntervalBatch, config: NetworkLearnerConfig) -> IntervalIntensities:
    """Run intensities, E-step and M-step of the network learner for one batch"""
    try:
        intens = network_interval_intensities(state, batch)
        network_e_step(state, batch.counts, intens, config.sweeps)
        if config.m_step == "sgd":
            network_m_step_sgd(state, batch.counts, intens, state.schedule.step_size(batch.interval_index), config)
            if config.learn_decay == "learned":
                _rebuild_network_decay_states(state)
        else:
            network_m_step_em(state, config)
    except OMMHPError as err:
        err.interval = batch.interval_index
        logger.error(f"Interval {batch.interval_index} failed: {err}")
        raise
    return intens


def bipartite_reduction(data, horizon: Optional[float] = None) -> NetworkEventLog:
    """
    Embed a sequence dataset in a network

    Sequence n becomes the edge (n, N + n) between a node and its duplicate,
    and both nodes share node group n, so the network learner runs on the
    sequence-level model.
    """
    sequences = list(getattr(data, "sequences", data))
    n = len(sequences)
    return NetworkEventLog(
        num_nodes=2 * n,
        edges=[(i, n + i) for i in range(n)],
        sequences=sequences,
        horizon=horizon,
        node_groups=list(range(n)) * 2,
    )


@log_execution_time
def fit_network_online(
    log: NetworkEventLog,
    config: NetworkLearnerConfig,
    initial_model: Optional[PairClusterModel] = None,
    initial_alpha: Optional[np.ndarray] = None,
) -> Tuple[FitTrajectory, NetworkLearnerState]:
    """
    Run the network learner over every interval of a network event log

    The trajectory's prior entries are the K x K pair prior flattened row-major.

    Raises:
        InvalidInputError: If the log has no edges
    """
    if not log.edges:
        raise InvalidInputError("no sequences")

    trajectory = FitTrajectory()
    state: Optional[NetworkLearnerState] = None
    for batch in stream_intervals(log.sequences, config.delta, config.num_types):
        if state is None:
            state = initialize_network_state(config, log, batch, initial_model, initial_alpha)
        process_network_interval(state, batch, config)
        record = IntervalRecord(
            interval=state.interval_index,
            elbo=network_elbo(state.model, state.alpha, state.log_evidence, state.edge_groups),
            prior=state.model.prior.ravel().tolist(),
        )
        if config.snapshot_every and state.interval_index % config.snapshot_every == 0:
            record.alpha = state.alpha.tolist()
        trajectory.records.append(record)
        logger.debug(f"Interval {record.interval}: elbo={record.elbo:.4f}")

    logger.info(f"Fitted network K={config.num_clusters} over {len(trajectory)} intervals on {len(log.edges)} edges")
    return trajectory, state
