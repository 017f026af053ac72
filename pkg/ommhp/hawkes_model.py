"""
Multivariate Hawkes processes with exponential kernels.

Core value types (events, sequences, cluster and mixture parameters), direct and
recursive intensity evaluation, and the continuous and interval-discretized
log-likelihoods. All likelihoods are returned in the log domain.

Conventions:
    - ``amplitudes[s, p]`` / ``decays[s, p]`` describe how an event of type ``s``
      excites type ``p``.
    - Only events strictly before ``t`` contribute to the intensity at ``t``.
"""

import logging
from typing import Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import logsumexp, xlogy

from .errors import InvalidInputError, NumericError

logger = logging.getLogger(__name__)


class Event(BaseModel):
    """A single timestamped event"""
    time: float = Field(ge=0)
    event_type: int = Field(ge=0)


class EventSequence(BaseModel):
    """Time-ordered events of one sequence observed on [0, horizon]"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray
    types: np.ndarray
    horizon: float = Field(gt=0)

    @field_validator("times", mode="before")
    @classmethod
    def _coerce_times(cls, value):
        times = np.asarray(value, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(times)):
            raise ValueError("event times must be finite")
        if np.any(times < 0):
            raise ValueError("event times must be nonnegative")
        if np.any(np.diff(times) < 0):
            raise ValueError("event times must be sorted nondecreasing")
        return times

    @field_validator("types", mode="before")
    @classmethod
    def _coerce_types(cls, value):
        types = np.asarray(value, dtype=np.int64).reshape(-1)
        if np.any(types < 0):
            raise ValueError("event types must be nonnegative")
        return types

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.times.shape != self.types.shape:
            raise ValueError(f"times and types differ in length ({self.times.size} vs {self.types.size})")
        if self.times.size and self.times[-1] > self.horizon:
            raise ValueError(f"event at t={self.times[-1]} lies beyond horizon {self.horizon}")
        return self

    @classmethod
    def from_events(cls, events: Iterable[Event], horizon: float) -> "EventSequence":
        """Build a sequence from Event records (sorted stably by time)"""
        events = sorted(events, key=lambda e: e.time)
        return cls(
            times=[e.time for e in events],
            types=[e.event_type for e in events],
            horizon=horizon,
        )

    @classmethod
    def empty(cls, horizon: float) -> "EventSequence":
        return cls(times=[], types=[], horizon=horizon)

    @property
    def events(self) -> List[Event]:
        return [Event(time=float(t), event_type=int(p)) for t, p in zip(self.times, self.types)]

    def before(self, t: float) -> "EventSequence":
        """History strictly before t"""
        cut = int(np.searchsorted(self.times, t, side="left"))
        return EventSequence(times=self.times[:cut], types=self.types[:cut], horizon=self.horizon)

    def check_types(self, num_types: int) -> None:
        if self.types.size and int(self.types.max()) >= num_types:
            raise InvalidInputError(f"event type {int(self.types.max())} out of range for P={num_types}")

    def __len__(self) -> int:
        return int(self.times.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.types, other.types)
        )


class KernelParams(BaseModel):
    """Exponential impact function a * exp(-b * lag)"""
    amplitude: float = Field(ge=0)
    decay: float = Field(gt=0)


class ClusterParams(BaseModel):
    """Hawkes parameters of one mixture component"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    base_rates: np.ndarray
    amplitudes: np.ndarray
    decays: np.ndarray

    @field_validator("base_rates", "amplitudes", "decays", mode="before")
    @classmethod
    def _coerce(cls, value):
        array = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise ValueError("parameters must be finite")
        return array

    @model_validator(mode="after")
    def _check(self):
        if self.base_rates.ndim != 1 or self.base_rates.size == 0:
            raise ValueError("base_rates must be a nonempty vector")
        num_types = self.base_rates.size
        # a scalar decay is broadcast to every (source, target) pair
        if self.decays.ndim == 0:
            self.decays = np.full((num_types, num_types), float(self.decays))
        for name in ("amplitudes", "decays"):
            if getattr(self, name).shape != (num_types, num_types):
                raise ValueError(f"{name} must have shape ({num_types}, {num_types})")
        if np.any(self.base_rates <= 0):
            raise ValueError("base rates must be positive")
        if np.any(self.amplitudes < 0):
            raise ValueError("amplitudes must be nonnegative")
        if np.any(self.decays <= 0):
            raise ValueError("decays must be positive")
        return self

    @classmethod
    def from_kernels(cls, base_rates: Sequence[float], kernels: Sequence[Sequence[KernelParams]]) -> "ClusterParams":
        return cls(
            base_rates=base_rates,
            amplitudes=[[k.amplitude for k in row] for row in kernels],
            decays=[[k.decay for k in row] for row in kernels],
        )

    @property
    def num_types(self) -> int:
        return int(self.base_rates.size)

    def kernel(self, source_type: int, target_type: int) -> KernelParams:
        return KernelParams(
            amplitude=float(self.amplitudes[source_type, target_type]),
            decay=float(self.decays[source_type, target_type]),
        )

    def copy_params(self) -> "ClusterParams":
        return ClusterParams(
            base_rates=self.base_rates.copy(),
            amplitudes=self.amplitudes.copy(),
            decays=self.decays.copy(),
        )


class MixtureModel(BaseModel):
    """K clusters plus their prior probabilities"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    clusters: List[ClusterParams]
    prior: np.ndarray

    @field_validator("prior", mode="before")
    @classmethod
    def _coerce_prior(cls, value):
        return np.array(value, dtype=np.float64).reshape(-1)

    @model_validator(mode="after")
    def _check(self):
        if not self.clusters:
            raise ValueError("a mixture needs at least one cluster")
        if self.prior.size != len(self.clusters):
            raise ValueError(f"prior has {self.prior.size} entries for {len(self.clusters)} clusters")
        if np.any(self.prior < 0) or abs(self.prior.sum() - 1.0) > 1e-12:
            raise ValueError(f"prior must lie on the simplex, got {self.prior.tolist()}")
        if len({c.num_types for c in self.clusters}) != 1:
            raise ValueError("all clusters must share the number of event types")
        return self

    @classmethod
    def uniform(cls, clusters: Sequence[ClusterParams]) -> "MixtureModel":
        return cls(clusters=list(clusters), prior=np.full(len(clusters), 1.0 / len(clusters)))

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)

    @property
    def num_types(self) -> int:
        return self.clusters[0].num_types


class DecayState(BaseModel):
    """
    Running exponential sums of one sequence under one set of decays.

    ``sums[s, p]`` is sum over events of type s strictly before
    ``last_update_time`` of exp(-decays[s, p] * lag) and ``lag_sums`` the same
    weighted by the lag. ``pending`` counts events sitting exactly at
    ``last_update_time``; they join the sums as soon as time moves on.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sums: np.ndarray
    lag_sums: np.ndarray
    pending: np.ndarray
    last_update_time: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if not (np.all(np.isfinite(self.sums)) and np.all(self.sums >= 0)):
            raise ValueError("decay sums must be finite and nonnegative")
        if not (np.all(np.isfinite(self.lag_sums)) and np.all(self.lag_sums >= 0)):
            raise ValueError("lag sums must be finite and nonnegative")
        return self

    @classmethod
    def empty(cls, num_types: int, start_time: float = 0.0) -> "DecayState":
        return cls(
            sums=np.zeros((num_types, num_types)),
            lag_sums=np.zeros((num_types, num_types)),
            pending=np.zeros(num_types, dtype=np.int64),
            last_update_time=start_time,
        )

    def intensities(self, cluster: ClusterParams) -> np.ndarray:
        """Per-type intensity at last_update_time"""
        return cluster.base_rates + np.sum(cluster.amplitudes * self.sums, axis=0)


class IntensityUpdate(NamedTuple):
    state: DecayState
    intensities: np.ndarray


def _check_target(cluster: ClusterParams, target_type: int) -> None:
    if not 0 <= target_type < cluster.num_types:
        raise IndexError(f"target type {target_type} out of range for P={cluster.num_types}")


def intensity(cluster: ClusterParams, history: EventSequence, target_type: int, t: float) -> float:
    """
    Conditional intensity of one event type, by direct summation

    Args:
        cluster: Hawkes parameters
        history: Events; only those strictly before t are used
        target_type: Event type p whose intensity is evaluated
        t: Evaluation time

    Returns:
        mu_p + sum over t_i < t of a[p_i, p] * exp(-b[p_i, p] * (t - t_i))

    Raises:
        IndexError: If target_type is not a valid type index
    """
    _check_target(cluster, target_type)
    history.check_types(cluster.num_types)
    if t < 0:
        raise InvalidInputError(f"evaluation time must be nonnegative, got {t}")

    mask = history.times < t
    sources = history.types[mask]
    lags = t - history.times[mask]
    excitation = cluster.amplitudes[sources, target_type] * np.exp(-cluster.decays[sources, target_type] * lags)
    return float(cluster.base_rates[target_type] + excitation.sum())


def advance_decay_arrays(
    state: DecayState,
    decays: np.ndarray,
    times: np.ndarray,
    types: np.ndarray,
    to_time: float,
) -> DecayState:
    """
    Array-level core of advance_decay_state.

    New events must lie in (last_update_time, to_time]; a state that has never
    seen an event at the origin also accepts events at time 0.
    """
    t0 = state.last_update_time
    times = np.asarray(times, dtype=np.float64)
    types = np.asarray(types, dtype=np.int64)

    if to_time < t0:
        raise InvalidInputError(f"cannot move decay state backwards from {t0} to {to_time}")
    if times.size:
        if np.any(np.diff(times) < 0):
            raise InvalidInputError("new events must be sorted by time")
        origin_ok = t0 == 0.0 and not np.any(state.pending)
        lower_ok = (times > t0) | (origin_ok & (times == t0))
        if not np.all(lower_ok) or times[-1] > to_time:
            raise InvalidInputError(f"new events must lie in ({t0}, {to_time}]")

    delta_t = to_time - t0
    if delta_t > 0:
        carried = state.sums + state.pending[:, None]
        decay = np.exp(-decays * delta_t)
        sums = carried * decay
        lag_sums = (state.lag_sums + delta_t * carried) * decay
        pending = np.zeros_like(state.pending)
    else:
        sums = state.sums.copy()
        lag_sums = state.lag_sums.copy()
        pending = state.pending.copy()

    past = times < to_time
    if np.any(past):
        sources = types[past]
        lags = to_time - times[past]
        contrib = np.exp(-decays[sources] * lags[:, None])
        np.add.at(sums, sources, contrib)
        np.add.at(lag_sums, sources, contrib * lags[:, None])
    at_end = types[~past]
    if at_end.size:
        np.add.at(pending, at_end, 1)

    return DecayState(sums=sums, lag_sums=lag_sums, pending=pending, last_update_time=float(to_time))


def advance_decay_state(
    state: DecayState,
    cluster: ClusterParams,
    new_events: Sequence[Event],
    to_time: float,
) -> IntensityUpdate:
    """
    Advance a decay state to to_time and evaluate every intensity there

    Args:
        state: State at last_update_time
        cluster: Parameters supplying base rates, amplitudes and decays
        new_events: Events in (last_update_time, to_time], sorted by time
        to_time: Time to advance to

    Returns:
        The advanced state and the length-P intensity vector at to_time

    Raises:
        InvalidInputError: If events are unsorted or outside the window
    """
    times = np.array([e.time for e in new_events], dtype=np.float64)
    types = np.array([e.event_type for e in new_events], dtype=np.int64)
    if types.size and int(types.max()) >= cluster.num_types:
        raise InvalidInputError(f"event type {int(types.max())} out of range for P={cluster.num_types}")
    new_state = advance_decay_arrays(state, cluster.decays, times, types, to_time)
    return IntensityUpdate(new_state, new_state.intensities(cluster))


def event_kernel_sums(seq: EventSequence, decays: np.ndarray) -> np.ndarray:
    """
    Strict-past kernel sums at every event of a sequence.

    Returns an array of shape (n, P, P) whose entry [i, s, p] is the sum over
    events j of type s with t_j < t_i of exp(-decays[s, p] * (t_i - t_j)).
    """
    num_types = decays.shape[0]
    out = np.zeros((len(seq), num_types, num_types))
    state = np.zeros((num_types, num_types))
    pending = np.zeros(num_types)
    current = 0.0
    for i, (t, p) in enumerate(zip(seq.times, seq.types)):
        if t > current:
            state = (state + pending[:, None]) * np.exp(-decays * (t - current))
            pending[:] = 0.0
            current = t
        out[i] = state
        pending[p] += 1.0
    return out


def event_intensities(seq: EventSequence, cluster: ClusterParams) -> np.ndarray:
    """Intensity of each event's own type at its own time"""
    sums = event_kernel_sums(seq, cluster.decays)
    excitation = np.einsum("isp,sp->ip", sums, cluster.amplitudes)
    return cluster.base_rates[seq.types] + excitation[np.arange(len(seq)), seq.types]


def compensator(seq: EventSequence, cluster: ClusterParams, horizon: Optional[float] = None) -> float:
    """Closed-form integral of the total intensity over [0, horizon]"""
    horizon = seq.horizon if horizon is None else horizon
    mask = seq.times <= horizon
    sources = seq.types[mask]
    remaining = horizon - seq.times[mask]
    a = cluster.amplitudes[sources]
    b = cluster.decays[sources]
    return float(cluster.base_rates.sum() * horizon + np.sum(a / b * -np.expm1(-b * remaining[:, None])))


def hp_log_likelihood_continuous(seq: EventSequence, cluster: ClusterParams) -> float:
    """
    Exact log-likelihood of one sequence under one Hawkes process

    Args:
        seq: The observed sequence on [0, seq.horizon]
        cluster: Hawkes parameters

    Returns:
        sum_i log lambda_{p_i}(t_i) - sum_p integral_0^T lambda_p(s) ds

    Raises:
        NumericError: If an event intensity is not positive
    """
    seq.check_types(cluster.num_types)
    lam = event_intensities(seq, cluster)
    if np.any(lam <= 0):
        bad = int(np.argmin(lam))
        raise NumericError("non-positive intensity at an event", payload={"event": bad, "intensity": float(lam[bad])})
    return float(np.sum(np.log(lam)) - compensator(seq, cluster))


def interval_end_intensities(seq: EventSequence, cluster: ClusterParams, delta: float) -> np.ndarray:
    """Intensities at every interval right endpoint, shape (num_intervals, P)"""
    from .discretizer import interval_edges

    seq.check_types(cluster.num_types)
    starts, ends = interval_edges(seq.horizon, delta)
    splits = np.searchsorted(seq.times, ends, side="right")
    state = DecayState.empty(cluster.num_types)
    out = np.empty((ends.size, cluster.num_types))
    lo = 0
    for tau, (end, hi) in enumerate(zip(ends, splits)):
        state = advance_decay_arrays(state, cluster.decays, seq.times[lo:hi], seq.types[lo:hi], end)
        out[tau] = state.intensities(cluster)
        lo = hi
    return out


def hp_log_likelihood_discretized(counts, interval_end_intensities: np.ndarray, delta: float) -> float:
    """
    Log of the interval-discretized likelihood

    Args:
        counts: IntervalCounts of one sequence
        interval_end_intensities: Array (num_intervals, P) of intensities at the
            interval right endpoints
        delta: Interval length; must match counts.delta

    Returns:
        sum over intervals and types of x log(lambda) - length * lambda, where
        length is delta except for a truncated final interval

    Raises:
        InvalidInputError: On dimension or delta mismatch
        NumericError: If an intensity is not positive
    """
    lam = np.asarray(interval_end_intensities, dtype=np.float64)
    if lam.shape != counts.counts.shape:
        raise InvalidInputError(f"intensities have shape {lam.shape}, counts have {counts.counts.shape}")
    if not np.isclose(delta, counts.delta):
        raise InvalidInputError(f"delta {delta} does not match the binning delta {counts.delta}")
    if np.any(lam <= 0):
        raise NumericError("non-positive interval intensity", payload={"min_intensity": float(lam.min())})
    return float(np.sum(xlogy(counts.counts, lam)) - np.sum(counts.lengths[:, None] * lam))


def cluster_log_likelihood_discretized(seq: EventSequence, cluster: ClusterParams, delta: float) -> float:
    """Discretized log-likelihood of a raw sequence under one cluster"""
    from .discretizer import bin_counts

    counts = bin_counts(seq, delta, num_types=cluster.num_types)
    return hp_log_likelihood_discretized(counts, interval_end_intensities(seq, cluster, delta), delta)


def mixture_log_likelihood_discretized(seq: EventSequence, model: MixtureModel, delta: float) -> float:
    """
    Log of the discretized mixture likelihood of one sequence

    Args:
        seq: The observed sequence
        model: Mixture parameters
        delta: Interval length

    Returns:
        log sum_k pi_k exp(log HP_k), evaluated with log-sum-exp
    """
    per_cluster = np.array([cluster_log_likelihood_discretized(seq, c, delta) for c in model.clusters])
    with np.errstate(divide="ignore"):
        log_prior = np.log(model.prior)
    return float(logsumexp(log_prior + per_cluster))


def branching_matrix(cluster: ClusterParams) -> np.ndarray:
    """Matrix of expected direct offspring counts a / b"""
    return cluster.amplitudes / cluster.decays


def spectral_radius(cluster: ClusterParams) -> float:
    """Largest absolute eigenvalue of the branching matrix; below 1 means stationary"""
    return float(np.max(np.abs(np.linalg.eigvals(branching_matrix(cluster)))))
