"""
Online variational EM for mixtures of multivariate Hawkes processes.

The learner consumes a dataset one interval batch at a time. For every interval
it evaluates each sequence's intensities under every cluster (with the
parameters of the previous interval), accumulates the log-evidence, refreshes
the responsibilities and the prior, and then takes one M-step on the cluster
parameters using the previous interval's responsibilities.

The M-step is either a projected stochastic-gradient ascent step on the
expected interval log-likelihood ("sgd") or a buffered branching-structure EM
update with the decays held fixed ("em").
"""

import logging
from typing import Any, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import minimize
from scipy.special import logsumexp, xlogy

from .discretizer import IntervalBatch, stream_intervals
from .errors import InvalidInputError, NumericError, OMMHPError, SequencingError
from .hawkes_model import (
    ClusterParams,
    DecayState,
    EventSequence,
    MixtureModel,
    advance_decay_arrays,
    event_kernel_sums,
    intensity,
)
from .logging_utils import log_execution_time
from .metrics import aligned_errors

logger = logging.getLogger(__name__)


class StepSchedule(BaseModel):
    """Learning-rate schedule eta_t"""
    rule: Literal["inverse_sqrt", "constant", "inverse"] = "inverse_sqrt"
    eta0: float = Field(1.0, gt=0)

    def step_size(self, t: int) -> float:
        if self.rule == "constant":
            return self.eta0
        if self.rule == "inverse":
            return self.eta0 / (t + 1)
        return self.eta0 / float(np.sqrt(t + 1))


class LearnerConfig(BaseModel):
    """Settings of one online fit"""
    num_clusters: int = Field(ge=1)
    num_types: int = Field(ge=1)
    delta: float = Field(gt=0)
    schedule: StepSchedule = Field(default_factory=StepSchedule)
    m_step: Literal["sgd", "em"] = "sgd"
    learn_decay: Literal["fixed", "learned"] = "fixed"
    decay: float = Field(3.1, gt=0)
    # "none" is the raw gradient step and needs a small eta0
    preconditioner: Literal["fisher", "none"] = "fisher"
    mu_min: float = Field(1e-6, gt=0)
    b_min: float = Field(1e-3, gt=0)
    decay_step_limit: float = Field(0.05, gt=0)
    prior_floor: float = Field(1e-10, ge=0, lt=0.5)
    runaway_factor: float = Field(1e3, gt=1)
    alpha_jitter: float = Field(1e-3, ge=0, lt=1)
    rate_jitter: float = Field(0.2, ge=0, lt=1)
    em_iterations: int = Field(1, ge=1)
    em_window: Optional[float] = Field(None, gt=0)
    snapshot_every: int = Field(0, ge=0)
    seed: int = Field(0, ge=0)

    @property
    def retains_history(self) -> bool:
        return self.m_step == "em" or self.learn_decay == "learned"


class IntervalIntensities(NamedTuple):
    """Everything the E- and M-steps need about one interval"""
    interval_index: int
    end: float
    length: float
    intensities: np.ndarray
    kernel_sums: np.ndarray
    lag_sums: np.ndarray


class ClusterGradients(NamedTuple):
    base_rates: np.ndarray
    amplitudes: np.ndarray
    decays: np.ndarray

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(block)) for block in self)


class LearnerState(BaseModel):
    """
    Iterates of the online learner.

    ``alpha`` holds the responsibilities after the latest E-step and
    ``prev_alpha`` those of the interval before, which weight the M-step.
    ``log_evidence`` is the K x N accumulated log R.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: MixtureModel
    alpha: np.ndarray
    prev_alpha: np.ndarray
    log_evidence: np.ndarray
    decay_states: List[List[DecayState]]
    interval_index: int = Field(0, ge=0)
    current_time: float = 0.0
    rate_scale: float = 0.0
    schedule: StepSchedule
    m_step: str
    history_times: List[np.ndarray] = Field(default_factory=list)
    history_types: List[np.ndarray] = Field(default_factory=list)

    @property
    def num_sequences(self) -> int:
        return int(self.alpha.shape[0])

    @property
    def num_clusters(self) -> int:
        return int(self.alpha.shape[1])



class IntervalRecord(BaseModel):
    interval: int
    elbo: float
    prior: List[float]
    relerr_mu: Optional[List[float]] = None
    relerr_a: Optional[List[float]] = None
    relerr_b: Optional[List[float]] = None
    alpha: Optional[List[List[float]]] = None


class FitTrajectory(BaseModel):
    """One record per processed interval"""
    records: List[IntervalRecord] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def elbos(self) -> np.ndarray:
        return np.array([r.elbo for r in self.records])

    def to_frame(self) -> pd.DataFrame:
        """Columns interval, elbo, pi_k, then relerr_mu_k, relerr_a_k (and relerr_b_k) when known"""
        rows = []
        for record in self.records:
            row = {"interval": record.interval, "elbo": record.elbo}
            row.update({f"pi_{k}": value for k, value in enumerate(record.prior)})
            for name, values in (("mu", record.relerr_mu), ("a", record.relerr_a), ("b", record.relerr_b)):
                if values is not None:
                    row.update({f"relerr_{name}_{k}": value for k, value in enumerate(values)})
            rows.append(row)
        return pd.DataFrame(rows)


def normalize_log_weights(log_weights: np.ndarray, axis: int = -1) -> np.ndarray:
    """exp(x - logsumexp(x)) along an axis"""
    return np.exp(log_weights - logsumexp(log_weights, axis=axis, keepdims=True))


def interval_log_terms(counts: np.ndarray, intensities: np.ndarray, length: float) -> np.ndarray:
    """sum_p [x log lambda - length * lambda]; counts broadcast against intensities over the last axis"""
    return np.sum(xlogy(counts, intensities) - length * intensities, axis=-1)


def initial_responsibilities(num_sequences: int, num_clusters: int, jitter: float, rng: np.random.Generator) -> np.ndarray:
    alpha = np.full((num_sequences, num_clusters), 1.0 / num_clusters)
    if jitter > 0 and num_clusters > 1:
        alpha = np.clip(alpha + rng.uniform(-jitter, jitter, size=alpha.shape), 0.0, None)
    return alpha / alpha.sum(axis=1, keepdims=True)


def initial_model_from_batch(batch: IntervalBatch, config: LearnerConfig, rng: np.random.Generator) -> MixtureModel:
    """Scale-aware start: jittered empirical rates of the first interval, a = 0.1 b / P"""
    rates = np.maximum(batch.counts.mean(axis=0) / batch.length, config.mu_min)
    decay = config.decay if config.learn_decay == "fixed" else 1.0
    clusters = []
    for _ in range(config.num_clusters):
        jitter = rng.uniform(1.0 - config.rate_jitter, 1.0 + config.rate_jitter, size=config.num_types)
        clusters.append(
            ClusterParams(
                base_rates=np.maximum(rates * jitter, config.mu_min),
                amplitudes=np.full((config.num_types, config.num_types), 0.1 * decay / config.num_types),
                decays=np.full((config.num_types, config.num_types), decay),
            )
        )
    return MixtureModel.uniform(clusters)


def initialize_state(
    config: LearnerConfig,
    first_batch: IntervalBatch,
    initial_model: Optional[MixtureModel] = None,
    initial_alpha: Optional[np.ndarray] = None,
) -> LearnerState:
    """
    Build the learner state before the first interval is processed

    Args:
        config: Learner settings
        first_batch: The first interval; only its counts are used, for the
            base-rate initialization
        initial_model: Explicit starting parameters (skips the data-driven start)
        initial_alpha: Explicit N x K starting responsibilities

    Returns:
        A LearnerState at interval 0
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    num_sequences = first_batch.num_sequences

    if initial_model is None:
        model = initial_model_from_batch(first_batch, config, rng)
    else:
        if initial_model.num_clusters != config.num_clusters or initial_model.num_types != config.num_types:
            raise InvalidInputError(
                f"initial model has K={initial_model.num_clusters}, P={initial_model.num_types}; "
                f"expected K={config.num_clusters}, P={config.num_types}"
            )
        model = initial_model

    if initial_alpha is None:
        alpha = initial_responsibilities(num_sequences, config.num_clusters, config.alpha_jitter, rng)
    else:
        alpha = np.array(initial_alpha, dtype=np.float64)
        if alpha.shape != (num_sequences, config.num_clusters):
            raise InvalidInputError(f"initial responsibilities have shape {alpha.shape}")
        if np.any(alpha < 0) or not np.allclose(alpha.sum(axis=1), 1.0, atol=1e-10):
            raise InvalidInputError("initial responsibilities must be rows on the simplex")

    return LearnerState(
        model=model,
        alpha=alpha,
        prev_alpha=alpha.copy(),
        log_evidence=np.zeros((config.num_clusters, num_sequences)),
        decay_states=[[DecayState.empty(config.num_types) for _ in range(config.num_clusters)] for _ in range(num_sequences)],
        schedule=config.schedule,
        m_step=config.m_step,
        history_times=[np.empty(0) for _ in range(num_sequences)] if config.retains_history else [],
        history_types=[np.empty(0, dtype=np.int64) for _ in range(num_sequences)] if config.retains_history else [],
    )


def interval_intensities(state: LearnerState, batch: IntervalBatch) -> IntervalIntensities:
    """
    Advance every (sequence, cluster) decay state to the end of the batch

    Args:
        state: Learner state after interval t - 1
        batch: The batch of interval t

    Returns:
        IntervalIntensities with arrays of shape (N, K, P) for the intensities
        and (N, K, P, P) for the kernel and lag sums, all evaluated with the
        parameters of interval t - 1

    Raises:
        SequencingError: If the batch is not the next interval
    """
    if batch.interval_index != state.interval_index + 1:
        raise SequencingError(
            f"expected interval {state.interval_index + 1}, got {batch.interval_index}",
            interval=batch.interval_index,
        )
    if batch.num_sequences != state.num_sequences:
        raise InvalidInputError(f"batch has {batch.num_sequences} sequences, state has {state.num_sequences}")

    clusters = state.model.clusters
    num_types = state.model.num_types
    shape = (state.num_sequences, len(clusters))
    lam = np.empty(shape + (num_types,))
    sums = np.empty(shape + (num_types, num_types))
    lags = np.empty_like(sums)

    for n in range(state.num_sequences):
        times, types = batch.times[n], batch.types[n]
        for k, cluster in enumerate(clusters):
            advanced = advance_decay_arrays(state.decay_states[n][k], cluster.decays, times, types, batch.end)
            state.decay_states[n][k] = advanced
            sums[n, k] = advanced.sums
            lags[n, k] = advanced.lag_sums
            lam[n, k] = advanced.intensities(cluster)
        if state.history_times:
            state.history_times[n] = np.concatenate((state.history_times[n], times))
            state.history_types[n] = np.concatenate((state.history_types[n], types))

    state.interval_index = batch.interval_index
    state.current_time = batch.end
    return IntervalIntensities(batch.interval_index, batch.end, batch.length, lam, sums, lags)


def e_step(
    state: LearnerState,
    counts: np.ndarray,
    intensities: IntervalIntensities,
    prior_floor: float = 0.0,
) -> np.ndarray:
    """
    Update log-evidence, responsibilities and prior for one interval

    Args:
        state: Learner state; mutated in place
        counts: N x P event counts of the interval
        intensities: Output of interval_intensities for the same interval
        prior_floor: Smallest prior weight; a cluster whose mean
            responsibility falls below it is lifted to it and the prior
            renormalized

    Returns:
        The new N x K responsibilities

    Raises:
        NumericError: If any intensity is not positive or log R is not finite
    """
    lam = intensities.intensities
    if not np.all(lam > 0):
        raise NumericError(
            "non-positive intensity in E-step",
            payload={"min_intensity": float(np.nanmin(lam))},
            interval=intensities.interval_index,
        )
    terms = interval_log_terms(counts[:, None, :], lam, intensities.length)
    log_evidence = state.log_evidence + terms.T
    if not np.all(np.isfinite(log_evidence)):
        raise NumericError("non-finite log evidence", interval=intensities.interval_index)

    with np.errstate(divide="ignore"):
        log_prior = np.log(state.model.prior)
    alpha = normalize_log_weights(log_prior[None, :] + log_evidence.T, axis=1)

    state.prev_alpha = state.alpha
    state.alpha = alpha
    state.log_evidence = log_evidence
    prior = alpha.sum(axis=0) / state.num_sequences
    if np.any(prior < prior_floor):
        prior = np.maximum(prior, prior_floor)
        prior = prior / prior.sum()
    state.model = MixtureModel(clusters=state.model.clusters, prior=prior)
    return alpha


def cluster_gradients(
    cluster: ClusterParams,
    weights: np.ndarray,
    counts: np.ndarray,
    intensities: np.ndarray,
    kernel_sums: np.ndarray,
    lag_sums: np.ndarray,
    length: float,
) -> ClusterGradients:
    """
    Gradient of sum_n w_n sum_p [x log lambda - length * lambda] for one cluster

    Args:
        cluster: Parameters the intensities were evaluated with
        weights: Length-N responsibilities of this cluster
        counts: N x P interval counts
        intensities: N x P intensities at the interval end
        kernel_sums: N x P x P strict-past sums of exp(-b lag)
        lag_sums: N x P x P strict-past sums of lag * exp(-b lag)
        length: Interval length

    Returns:
        ClusterGradients for base rates, amplitudes and decays. The decay block
        carries the factor -lag from d/db exp(-b lag).
    """
    residual = weights[:, None] * (counts / intensities - length)
    return ClusterGradients(
        base_rates=residual.sum(axis=0),
        amplitudes=np.einsum("np,nsp->sp", residual, kernel_sums),
        decays=-cluster.amplitudes * np.einsum("np,nsp->sp", residual, lag_sums),
    )


class ClusterCurvature(NamedTuple):
    """Expected Poisson information of one cluster's parameters"""
    joint: np.ndarray
    decays: np.ndarray


def fisher_information(
    weights: np.ndarray,
    intensities: np.ndarray,
    kernel_sums: np.ndarray,
    lag_sums: np.ndarray,
    amplitudes: np.ndarray,
    length: float,
) -> ClusterCurvature:
    """
    sum_n w_n length / lambda_np times the outer product of d lambda_np

    lambda_p is linear in (mu_p, a[:, p]) with features (1, kernel_sums[:, :, p]),
    so every target type gets a full (P + 1) x (P + 1) block in ``joint``.
    ``decays`` holds the diagonal information of each decay.
    """
    scale = weights[:, None] * length / intensities
    features = np.concatenate((np.ones(intensities.shape + (1,)), np.swapaxes(kernel_sums, 1, 2)), axis=2)
    joint = np.einsum("np,npi,npj->pij", scale, features, features)
    decays = np.einsum("np,nsp->sp", scale, (amplitudes[None] * lag_sums) ** 2)
    return ClusterCurvature(joint=joint, decays=decays)


def natural_gradient(gradients: ClusterGradients, curvature: ClusterCurvature, ridge: float = 1e-3) -> ClusterGradients:
    """
    Solve every target type's (mu_p, a[:, p]) gradient against its information block

    The block diagonal is inflated by the factor 1 + ridge. Directions
    without information (all-zero rows) get a zero step.
    """
    joint = curvature.joint
    damped = joint + ridge * joint * np.eye(joint.shape[-1])[None]
    stacked = np.concatenate((gradients.base_rates[:, None], gradients.amplitudes.T), axis=1)
    step = np.einsum("pij,pj->pi", np.linalg.pinv(damped, hermitian=True), stacked)
    decays = np.divide(gradients.decays, curvature.decays, out=np.zeros_like(gradients.decays), where=curvature.decays > 0)
    return ClusterGradients(base_rates=step[:, 0], amplitudes=step[:, 1:].T.copy(), decays=decays)


def ascent_direction(
    cluster: ClusterParams,
    weights: np.ndarray,
    counts: np.ndarray,
    intensities: np.ndarray,
    kernel_sums: np.ndarray,
    lag_sums: np.ndarray,
    length: float,
    preconditioner: str,
) -> ClusterGradients:
    """
    Direction of one M-step for one cluster

    With "fisher" the gradient is preconditioned by natural_gradient; the
    weights are scaled to a maximum of 1 first, which leaves that direction
    unchanged. With "none" it is the raw gradient of cluster_gradients.
    """
    grads = cluster_gradients(cluster, weights, counts, intensities, kernel_sums, lag_sums, length)
    if preconditioner == "none" or not grads.is_finite():
        return grads
    top = float(np.max(weights, initial=0.0))
    if top <= 0:
        return ClusterGradients(*(np.zeros_like(block) for block in grads))
    unit = weights / top
    grads = cluster_gradients(cluster, unit, counts, intensities, kernel_sums, lag_sums, length)
    return natural_gradient(grads, fisher_information(unit, intensities, kernel_sums, lag_sums, cluster.amplitudes, length))


def sgd_update_cluster(
    cluster: ClusterParams,
    direction: ClusterGradients,
    eta: float,
    config: LearnerConfig,
) -> ClusterParams:
    """
    One projected ascent step along direction

    Under the "fisher" preconditioner a learned decay moves by at most a
    factor exp(eta * decay_step_limit) per step.
    """
    base_rates = np.maximum(cluster.base_rates + eta * direction.base_rates, config.mu_min)
    amplitudes = np.maximum(cluster.amplitudes + eta * direction.amplitudes, 0.0)
    if config.learn_decay == "learned":
        decays = cluster.decays + eta * direction.decays
        if config.preconditioner == "fisher":
            bound = np.exp(eta * config.decay_step_limit)
            decays = np.clip(decays, cluster.decays / bound, cluster.decays * bound)
        decays = np.maximum(decays, config.b_min)
    else:
        decays = cluster.decays.copy()
    return ClusterParams(base_rates=base_rates, amplitudes=amplitudes, decays=decays)


def observe_rate_scale(state: Any, counts: np.ndarray, length: float) -> float:
    """Largest per-type interval rate seen so far, at least one event per interval"""
    peak = float(np.max(counts, initial=0.0)) / length
    state.rate_scale = max(state.rate_scale, peak, 1.0 / length)
    return state.rate_scale


def check_runaway(cluster: ClusterParams, limit: float, interval: int, /, **where: Any) -> None:
    """
    Raise if a base rate or amplitude left the range the data can support

    Raises:
        NumericError: With the offending parameters and the limit in the payload
    """
    peak = max(float(np.max(cluster.base_rates)), float(np.max(cluster.amplitudes)))
    if not peak <= limit:
        raise NumericError(
            f"parameters ran away (peak {peak:.4g} above {limit:.4g}); use a smaller step size",
            payload={
                **where,
                "base_rates": cluster.base_rates.tolist(),
                "amplitudes": cluster.amplitudes.tolist(),
                "limit": limit,
            },
            interval=interval,
        )


def m_step_sgd(
    state: LearnerState,
    counts: np.ndarray,
    intensities: IntervalIntensities,
    eta: float,
    config: LearnerConfig,
) -> MixtureModel:
    """
    Stochastic-gradient M-step weighted by the previous responsibilities

    Raises:
        NumericError: If a step direction is not finite, or if a base rate or
            amplitude exceeds runaway_factor times the largest interval rate
            observed so far; the payload names the cluster
    """
    limit = config.runaway_factor * observe_rate_scale(state, counts, intensities.length)
    clusters = []
    for k, cluster in enumerate(state.model.clusters):
        direction = ascent_direction(
            cluster, state.prev_alpha[:, k], counts, intensities.intensities[:, k],
            intensities.kernel_sums[:, k], intensities.lag_sums[:, k], intensities.length, config.preconditioner,
        )
        if not direction.is_finite():
            raise NumericError(
                "non-finite gradient",
                payload={"cluster": k, "gradients": {name: block.tolist() for name, block in direction._asdict().items()}},
                interval=intensities.interval_index,
            )
        updated = sgd_update_cluster(cluster, direction, eta, config)
        check_runaway(updated, limit, intensities.interval_index, cluster=k)
        clusters.append(updated)

    state.model = MixtureModel(clusters=clusters, prior=state.model.prior)
    return state.model


def em_update(
    sequences: Sequence[EventSequence],
    weights: np.ndarray,
    cluster: ClusterParams,
    mu_min: float = 1e-6,
) -> ClusterParams:
    """
    One weighted EM iteration over the latent branching structure, decays fixed

    Every sequence must be observed on the same window [0, horizon].

    Args:
        sequences: Buffered sequences
        weights: Responsibility of the cluster for each sequence
        cluster: Current parameters
        mu_min: Lower bound on the new base rates

    Returns:
        Updated ClusterParams
    """
    num_types = cluster.num_types
    mu, a, b = cluster.base_rates, cluster.amplitudes, cluster.decays
    background = np.zeros(num_types)
    triggered = np.zeros((num_types, num_types))  # indexed [target, source]
    exposure = np.zeros((num_types, num_types))
    total_weight = 0.0
    length = sequences[0].horizon

    for seq, w in zip(sequences, weights):
        total_weight += w
        if w == 0 or len(seq) == 0:
            continue
        idx = np.arange(len(seq))
        excitation = (a[None] * event_kernel_sums(seq, b))[idx, :, seq.types]
        lam = mu[seq.types] + excitation.sum(axis=1)
        np.add.at(background, seq.types, w * mu[seq.types] / lam)
        np.add.at(triggered, seq.types, w * excitation / lam[:, None])
        remaining = (seq.horizon - seq.times)[:, None]
        np.add.at(exposure, seq.types, w * -np.expm1(-b[seq.types] * remaining) / b[seq.types])

    if total_weight <= 0:
        return cluster.copy_params()
    new_mu = np.maximum(background / (total_weight * length), mu_min)
    new_a = np.where(exposure > 0, triggered.T / np.where(exposure > 0, exposure, 1.0), a)
    return ClusterParams(base_rates=new_mu, amplitudes=new_a, decays=b.copy())


def buffered_window(
    history_times: Sequence[np.ndarray],
    history_types: Sequence[np.ndarray],
    end: float,
    window: Optional[float],
) -> List[EventSequence]:
    """Retained events inside the trailing window, re-based to start at 0"""
    start = 0.0 if window is None else max(0.0, end - window)
    buffered = []
    for times, types in zip(history_times, history_types):
        keep = times > start if start > 0 else np.ones(times.shape, dtype=bool)
        buffered.append(EventSequence(times=times[keep] - start, types=types[keep], horizon=end - start))
    return buffered


def m_step_em(state: LearnerState, config: LearnerConfig) -> MixtureModel:
    """
    Branching-structure EM on the buffered events, weighted by the previous responsibilities

    Events before a sliding window are dropped, and the window is then treated
    as a fresh observation period. An empty buffer leaves the model unchanged.
    """
    if not state.history_times:
        raise InvalidInputError("EM M-step needs retained history")
    buffered = buffered_window(state.history_times, state.history_types, state.current_time, config.em_window)
    if sum(len(s) for s in buffered) == 0:
        logger.debug(f"Interval {state.interval_index}: empty EM buffer, M-step skipped")
        return state.model

    clusters = []
    for k, cluster in enumerate(state.model.clusters):
        weights = state.prev_alpha[:, k]
        updated = cluster
        for _ in range(config.em_iterations):
            updated = em_update(buffered, weights, updated, config.mu_min)
        clusters.append(updated)
    state.model = MixtureModel(clusters=clusters, prior=state.model.prior)
    return state.model


def rebuild_decay_states(state: LearnerState) -> None:
    """Recompute every decay state from the retained history under the current decays"""
    num_types = state.model.num_types
    for n in range(state.num_sequences):
        for k, cluster in enumerate(state.model.clusters):
            state.decay_states[n][k] = advance_decay_arrays(
                DecayState.empty(num_types), cluster.decays,
                state.history_times[n], state.history_types[n], state.current_time,
            )


def variational_bound(alpha: np.ndarray, prior: np.ndarray, log_evidence: np.ndarray) -> float:
    """sum_nk alpha (log R + log pi - log alpha) with 0 log 0 = 0"""
    return float(
        np.sum(alpha * log_evidence.T)
        + np.sum(xlogy(alpha, prior[None, :]))
        - np.sum(xlogy(alpha, alpha))
    )


def elbo(state: LearnerState) -> float:
    """ELBO of the state: accumulated expected log-likelihood plus prior and entropy terms"""
    return variational_bound(state.alpha, state.model.prior, state.log_evidence)


def hard_assignments(alpha: np.ndarray) -> np.ndarray:
    """argmax over clusters; ties go to the lowest index"""
    return np.argmax(np.asarray(alpha), axis=1)


def expected_interval_loglik(
    cluster: ClusterParams,
    weights: np.ndarray,
    histories: Sequence[EventSequence],
    counts: np.ndarray,
    end: float,
    length: float,
) -> float:
    """
    Weighted interval log-likelihood of one cluster, with intensities summed directly

    This is the objective m_step_sgd ascends; it is evaluated from scratch so
    it can be differentiated numerically.
    """
    lam = np.array([[intensity(cluster, h, p, end) for p in range(cluster.num_types)] for h in histories])
    return float(np.sum(weights * interval_log_terms(counts, lam, length)))


def process_interval(state: LearnerState, batch: IntervalBatch, config: LearnerConfig) -> IntervalIntensities:
    """Run intensities, E-step and M-step for one batch"""
    try:
        intens = interval_intensities(state, batch)
        e_step(state, batch.counts, intens, config.prior_floor)
        if config.m_step == "sgd":
            m_step_sgd(state, batch.counts, intens, state.schedule.step_size(batch.interval_index), config)
            if config.learn_decay == "learned":
                rebuild_decay_states(state)
        else:
            m_step_em(state, config)
    except OMMHPError as err:
        err.interval = batch.interval_index
        logger.error(f"Interval {batch.interval_index} failed: {err}")
        raise
    return intens


def make_record(
    state: LearnerState,
    config: LearnerConfig,
    ground_truth: Optional[MixtureModel] = None,
) -> IntervalRecord:
    record = IntervalRecord(interval=state.interval_index, elbo=elbo(state), prior=state.model.prior.tolist())
    if ground_truth is not None:
        learned = config.learn_decay == "learned"
        errors = aligned_errors(state.model, ground_truth.clusters, include_decays=learned)
        record.relerr_mu = [e.base_rates for e in errors]
        record.relerr_a = [e.amplitudes for e in errors]
        if learned:
            record.relerr_b = [e.decays for e in errors]
    if config.snapshot_every and state.interval_index % config.snapshot_every == 0:
        record.alpha = state.alpha.tolist()
    return record


@log_execution_time
def fit_online(
    data: Any,
    config: LearnerConfig,
    ground_truth: Optional[MixtureModel] = None,
    initial_model: Optional[MixtureModel] = None,
    initial_alpha: Optional[np.ndarray] = None,
) -> Tuple[FitTrajectory, LearnerState]:
    """
    Run the online learner over every interval of a dataset

    Args:
        data: LabeledDataset or list of EventSequence with a common horizon
        config: Learner settings
        ground_truth: True mixture, for per-interval relative errors
        initial_model: Explicit starting parameters
        initial_alpha: Explicit starting responsibilities

    Returns:
        The per-interval trajectory and the final LearnerState

    Raises:
        InvalidInputError: On malformed data or a ground truth of the wrong size
        OMMHPError: From any interval, with its interval attribute set
    """
    if ground_truth is not None and ground_truth.num_clusters != config.num_clusters:
        raise InvalidInputError(
            f"ground truth has {ground_truth.num_clusters} clusters, the fit uses {config.num_clusters}"
        )

    trajectory = FitTrajectory()
    state: Optional[LearnerState] = None
    for batch in stream_intervals(data, config.delta, config.num_types):
        if state is None:
            state = initialize_state(config, batch, initial_model, initial_alpha)
        process_interval(state, batch, config)
        record = make_record(state, config, ground_truth)
        trajectory.records.append(record)
        logger.debug(f"Interval {record.interval}: elbo={record.elbo:.4f} prior={np.round(record.prior, 4).tolist()}")

    logger.info(
        f"Fitted K={config.num_clusters} over {len(trajectory)} intervals; "
        f"final elbo={trajectory.records[-1].elbo:.4f}"
    )
    return trajectory, state


@log_execution_time
def fit_labeled_mle(
    sequences: Sequence[EventSequence],
    decays: Union[float, np.ndarray],
    num_types: Optional[int] = None,
    mu_min: float = 1e-6,
    max_iter: int = 500,
) -> ClusterParams:
    """
    Full-batch maximum likelihood of one cluster from sequences known to belong to it

    Uses the continuous log-likelihood and its analytic gradient under
    L-BFGS-B, with the decays held fixed.

    Args:
        sequences: Sequences of the cluster
        decays: Fixed decays, scalar or P x P
        num_types: Number of event types (default: inferred from decays or data)
        mu_min: Lower bound on base rates
        max_iter: Iteration cap for the optimizer

    Returns:
        The fitted ClusterParams
    """
    if not sequences:
        raise InvalidInputError("no sequences")
    if num_types is None:
        num_types = np.shape(decays)[0] if np.ndim(decays) else max(int(s.types.max()) + 1 for s in sequences if len(s))
    b = np.broadcast_to(np.asarray(decays, dtype=np.float64), (num_types, num_types)).copy()

    types_all, sums_all = [], []
    exposure = np.zeros((num_types, num_types))
    total_time = 0.0
    for seq in sequences:
        seq.check_types(num_types)
        total_time += seq.horizon
        if len(seq) == 0:
            continue
        sums = event_kernel_sums(seq, b)
        sums_all.append(sums[np.arange(len(seq)), :, seq.types])
        types_all.append(seq.types)
        np.add.at(exposure, seq.types, -np.expm1(-b[seq.types] * (seq.horizon - seq.times)[:, None]) / b[seq.types])
    types = np.concatenate(types_all) if types_all else np.empty(0, dtype=np.int64)
    source_sums = np.concatenate(sums_all) if sums_all else np.empty((0, num_types))

    def negative_loglik(x: np.ndarray) -> Tuple[float, np.ndarray]:
        mu, a = x[:num_types], x[num_types:].reshape(num_types, num_types)
        lam = mu[types] + np.sum(a.T[types] * source_sums, axis=1)
        value = np.sum(np.log(lam)) - mu.sum() * total_time - np.sum(a * exposure)
        grad_mu = np.bincount(types, weights=1.0 / lam, minlength=num_types) - total_time
        grad_a_t = np.zeros((num_types, num_types))
        np.add.at(grad_a_t, types, source_sums / lam[:, None])
        grad_a = grad_a_t.T - exposure
        return -value, -np.concatenate((grad_mu, grad_a.ravel()))

    counts = np.bincount(types, minlength=num_types)
    x0 = np.concatenate((np.maximum(counts / total_time, mu_min), np.full(num_types * num_types, 0.1 / num_types) * b.ravel()))
    bounds = [(mu_min, None)] * num_types + [(0.0, None)] * (num_types * num_types)
    result = minimize(negative_loglik, x0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iter})
    if not result.success:
        logger.warning(f"Labeled MLE did not converge: {result.message}")
    return ClusterParams(
        base_rates=result.x[:num_types],
        amplitudes=result.x[num_types:].reshape(num_types, num_types),
        decays=b,
    )
