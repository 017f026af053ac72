"""
Interval discretization of event sequences.

Interval t covers (delta * (t - 1), delta * t]; interval 1 also owns events at
time 0. When the horizon is not a multiple of delta the last interval is
truncated at the horizon and keeps its true length.
"""

import logging
import math
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import InvalidInputError
from .hawkes_model import Event, EventSequence

logger = logging.getLogger(__name__)


def num_intervals(horizon: float, delta: float) -> int:
    """ceil(horizon / delta), tolerant to floating-point round-off"""
    if delta <= 0:
        raise InvalidInputError(f"delta must be positive, got {delta}")
    if delta > horizon:
        raise InvalidInputError(f"delta {delta} exceeds horizon {horizon}")
    ratio = horizon / delta
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, ratio):
        return int(nearest)
    return int(math.ceil(ratio))


def interval_edges(horizon: float, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Left and right edges of every interval; the last right edge is the horizon"""
    count = num_intervals(horizon, delta)
    ends = np.minimum(np.arange(1, count + 1) * delta, horizon)
    ends[-1] = horizon
    starts = np.concatenate(([0.0], ends[:-1]))
    return starts, ends


class IntervalCounts(BaseModel):
    """Per-interval, per-type event counts of one sequence"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    counts: np.ndarray
    delta: float = Field(gt=0)
    horizon: float = Field(gt=0)

    @property
    def num_intervals(self) -> int:
        return int(self.counts.shape[0])

    @property
    def lengths(self) -> np.ndarray:
        starts, ends = interval_edges(self.horizon, self.delta)
        return ends - starts

    @property
    def ends(self) -> np.ndarray:
        return interval_edges(self.horizon, self.delta)[1]


def bin_counts(
    seq: EventSequence,
    delta: float,
    horizon: Optional[float] = None,
    num_types: Optional[int] = None,
) -> IntervalCounts:
    """
    Count events per interval and type

    Args:
        seq: The sequence to bin
        delta: Interval length, 0 < delta <= horizon
        horizon: Observation horizon (default: seq.horizon)
        num_types: Number of event types P (default: 1 + largest observed type)

    Returns:
        IntervalCounts with ceil(horizon / delta) rows and P columns

    Raises:
        InvalidInputError: On a bad delta, an event beyond the horizon or an
            out-of-range type
    """
    horizon = seq.horizon if horizon is None else horizon
    if num_types is None:
        num_types = int(seq.types.max()) + 1 if len(seq) else 1
    seq.check_types(num_types)
    if len(seq) and seq.times[-1] > horizon:
        raise InvalidInputError(f"event at t={seq.times[-1]} lies beyond horizon {horizon}")

    _, ends = interval_edges(horizon, delta)
    counts = np.zeros((ends.size, num_types), dtype=np.int64)
    rows = np.searchsorted(ends, seq.times, side="left")
    np.add.at(counts, (rows, seq.types), 1)
    return IntervalCounts(counts=counts, delta=delta, horizon=horizon)


class IntervalBatch(BaseModel):
    """All sequences' events that fall into one interval"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    interval_index: int = Field(ge=1)
    start: float
    end: float
    times: List[np.ndarray]
    types: List[np.ndarray]
    counts: np.ndarray

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def num_sequences(self) -> int:
        return len(self.times)

    def events(self, index: int) -> List[Event]:
        return [Event(time=float(t), event_type=int(p)) for t, p in zip(self.times[index], self.types[index])]


def _as_sequences(data) -> List[EventSequence]:
    sequences = getattr(data, "sequences", data)
    return list(sequences)


def common_horizon(sequences: Sequence[EventSequence]) -> float:
    if not sequences:
        raise InvalidInputError("no sequences")
    horizons = {s.horizon for s in sequences}
    if len(horizons) != 1:
        raise InvalidInputError(f"sequences have mixed horizons: {sorted(horizons)}")
    return horizons.pop()


def stream_intervals(
    data: Union[Sequence[EventSequence], "object"],
    delta: float,
    num_types: Optional[int] = None,
) -> Iterator[IntervalBatch]:
    """
    Replay a dataset as an ordered stream of interval batches

    Args:
        data: A LabeledDataset or a list of EventSequence sharing one horizon
        delta: Interval length
        num_types: Number of event types (default: inferred from the data)

    Returns:
        An iterator over IntervalBatch objects for t = 1 .. ceil(T / delta)

    Raises:
        InvalidInputError: If the sequences have mixed horizons or there are none
    """
    sequences = _as_sequences(data)
    horizon = common_horizon(sequences)
    if num_types is None:
        num_types = max((int(s.types.max()) + 1 for s in sequences if len(s)), default=1)
    for seq in sequences:
        seq.check_types(num_types)
    starts, ends = interval_edges(horizon, delta)
    splits = [np.searchsorted(s.times, ends, side="right") for s in sequences]
    logger.debug(f"Streaming {len(sequences)} sequences over {ends.size} intervals of length {delta}")
    return _generate_batches(sequences, starts, ends, splits, num_types)


def _generate_batches(sequences, starts, ends, splits, num_types) -> Iterator[IntervalBatch]:
    lower = [0] * len(sequences)
    for tau in range(ends.size):
        times, types = [], []
        counts = np.zeros((len(sequences), num_types), dtype=np.int64)
        for n, seq in enumerate(sequences):
            hi = int(splits[n][tau])
            times.append(seq.times[lower[n]:hi])
            types.append(seq.types[lower[n]:hi])
            np.add.at(counts[n], types[-1], 1)
            lower[n] = hi
        yield IntervalBatch(
            interval_index=tau + 1,
            start=float(starts[tau]),
            end=float(ends[tau]),
            times=times,
            types=types,
            counts=counts,
        )
