"""
File formats: JSON-lines event logs, label sidecars, model documents and
trajectory CSVs. Every writer replaces its target atomically.

Event-log record::

    {"seq": "s0003", "t": 12.75, "p": 1}                   # sequence data
    {"seq": "e0", "t": 12.75, "p": 1, "src": 0, "dst": 4}  # network data

An optional first line carries the metadata that events alone cannot express
(the horizon, the number of types, and sequences without events)::

    {"horizon": 1000.0, "num_types": 2, "sequences": ["s0000", ...]}
"""

import io
import json
import logging
import os
import tempfile
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import EventLogParseError, InvalidInputError
from .hawkes_model import ClusterParams, EventSequence, MixtureModel
from .learner import FitTrajectory

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class EventRecord(BaseModel):
    """One event-log line"""
    model_config = ConfigDict(extra="forbid")

    seq: str
    t: float = Field(ge=0)
    p: int = Field(ge=0)
    src: Optional[int] = Field(None, ge=0)
    dst: Optional[int] = Field(None, ge=0)


class LogHeader(BaseModel):
    """Optional first line of an event log"""
    model_config = ConfigDict(extra="forbid")

    horizon: float = Field(gt=0)
    num_types: int = Field(ge=1)
    sequences: List[str]
    edges: Optional[List[Tuple[int, int]]] = None
    num_nodes: Optional[int] = Field(None, ge=0)


class EventLog(BaseModel):
    """Parsed contents of an event log"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    ids: List[str]
    sequences: List[EventSequence]
    horizon: float
    num_types: int
    edges: Optional[List[Tuple[int, int]]] = None
    num_nodes: Optional[int] = None

    @property
    def is_network(self) -> bool:
        return self.edges is not None

    def to_network(self, undirected: bool = False):
        """NetworkEventLog with one edge per (src, dst); ids sharing an edge are merged"""
        from .network import NetworkEventLog

        if self.edges is None:
            raise InvalidInputError("event log has no src/dst fields")
        num_nodes = self.num_nodes
        if num_nodes is None:
            num_nodes = 1 + max((max(e) for e in self.edges), default=-1)
        return NetworkEventLog.from_edge_sequences(num_nodes, zip(self.edges, self.sequences), undirected=undirected)


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write text to a temporary file next to path, then rename it into place"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(handle, "w", encoding="utf-8", newline="") as tmp:
            tmp.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_event_log(
    path: PathLike,
    sequences: Sequence[EventSequence],
    ids: Optional[Sequence[str]] = None,
    edges: Optional[Sequence[Tuple[int, int]]] = None,
    num_types: Optional[int] = None,
    num_nodes: Optional[int] = None,
) -> Path:
    """
    Write sequences as a JSON-lines event log with a header line

    Args:
        path: Destination file
        sequences: Sequences sharing one horizon
        ids: Sequence ids (default: s0000, s0001, ...)
        edges: Optional (src, dst) per sequence for network data
        num_types: Number of event types (default: inferred)
        num_nodes: Number of network nodes (network data only)

    Returns:
        The written path
    """
    if not sequences:
        raise InvalidInputError("no sequences")
    ids = list(ids) if ids is not None else [f"s{n:04d}" for n in range(len(sequences))]
    if num_types is None:
        num_types = max((int(s.types.max()) + 1 for s in sequences if len(s)), default=1)
    header = LogHeader(
        horizon=sequences[0].horizon,
        num_types=num_types,
        sequences=ids,
        edges=list(edges) if edges is not None else None,
        num_nodes=num_nodes,
    )

    buffer = io.StringIO()
    buffer.write(header.model_dump_json(exclude_none=True) + "\n")
    for n, (seq_id, seq) in enumerate(zip(ids, sequences)):
        extra = {"src": edges[n][0], "dst": edges[n][1]} if edges is not None else {}
        for t, p in zip(seq.times, seq.types):
            buffer.write(json.dumps({"seq": seq_id, "t": float(t), "p": int(p), **extra}) + "\n")
    return atomic_write_text(path, buffer.getvalue())


def read_event_log(path: PathLike, horizon: Optional[float] = None, num_types: Optional[int] = None) -> EventLog:
    """
    Parse a JSON-lines event log

    Args:
        path: Log file
        horizon: Horizon to use when the log has no header
        num_types: Number of types to use when the log has no header

    Returns:
        EventLog with sequences in order of first appearance (header order
        when a header is present)

    Raises:
        EventLogParseError: On a malformed line, with its line number
        InvalidInputError: If the log holds no sequences or no horizon is known
    """
    header: Optional[LogHeader] = None
    events: "OrderedDict[str, List[Tuple[float, int]]]" = OrderedDict()
    edge_of: Dict[str, Tuple[int, int]] = {}

    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as e:
                raise EventLogParseError(f"invalid JSON ({e.msg})", line_number) from e
            if not isinstance(payload, dict):
                raise EventLogParseError("record is not a JSON object", line_number)
            try:
                if "horizon" in payload and "seq" not in payload:
                    if header is not None or events:
                        raise EventLogParseError("header must be the first record", line_number)
                    header = LogHeader.model_validate(payload)
                    for seq_id in header.sequences:
                        events[seq_id] = []
                    continue
                record = EventRecord.model_validate(payload)
            except ValidationError as e:
                raise EventLogParseError(e.errors()[0]["msg"], line_number) from e

            if (record.src is None) != (record.dst is None):
                raise EventLogParseError("src and dst must appear together", line_number)
            events.setdefault(record.seq, []).append((record.t, record.p))
            if record.src is not None:
                edge = (record.src, record.dst)
                if edge_of.setdefault(record.seq, edge) != edge:
                    raise EventLogParseError(f"sequence {record.seq} changes edge", line_number)

    if not events:
        raise InvalidInputError("no sequences")
    horizon = header.horizon if header is not None else horizon
    if horizon is None:
        raise InvalidInputError("event log has no header; a horizon must be supplied")
    if header is not None:
        num_types = header.num_types
    elif num_types is None:
        num_types = 1 + max((p for evs in events.values() for _, p in evs), default=0)

    sequences = []
    for seq_id, evs in events.items():
        evs.sort(key=lambda e: e[0])
        try:
            seq = EventSequence(times=[t for t, _ in evs], types=[p for _, p in evs], horizon=horizon)
        except ValidationError as e:
            raise InvalidInputError(f"sequence {seq_id}: {e.errors()[0]['msg']}") from e
        seq.check_types(num_types)
        sequences.append(seq)

    edges = None
    num_nodes = header.num_nodes if header is not None else None
    if header is not None and header.edges is not None:
        edges = list(header.edges)
    elif edge_of:
        missing = [s for s in events if s not in edge_of]
        if missing:
            raise InvalidInputError(f"sequences without an edge in a network log: {missing[:5]}")
        edges = [edge_of[s] for s in events]

    logger.info(f"Read {len(sequences)} sequences with {sum(len(s) for s in sequences)} events from {path}")
    return EventLog(ids=list(events), sequences=sequences, horizon=horizon, num_types=num_types, edges=edges, num_nodes=num_nodes)


def write_labels(path: PathLike, ids: Sequence[str], labels: Sequence[int]) -> Path:
    """CSV sidecar with columns seq,label"""
    if len(ids) != len(labels):
        raise InvalidInputError(f"{len(labels)} labels for {len(ids)} sequences")
    frame = pd.DataFrame({"seq": list(ids), "label": np.asarray(labels, dtype=np.int64)})
    return atomic_write_text(path, frame.to_csv(index=False))


def read_labels(path: PathLike) -> Tuple[List[str], List[int]]:
    frame = pd.read_csv(path, dtype={"seq": str})
    if list(frame.columns) != ["seq", "label"]:
        raise InvalidInputError(f"{path}: expected columns seq,label, got {','.join(frame.columns)}")
    return frame["seq"].tolist(), frame["label"].astype(int).tolist()


class ClusterDocument(BaseModel):
    base_rates: List[float]
    amplitudes: List[List[float]]
    decays: List[List[float]]

    @classmethod
    def from_params(cls, params: ClusterParams) -> "ClusterDocument":
        return cls(
            base_rates=params.base_rates.tolist(),
            amplitudes=params.amplitudes.tolist(),
            decays=params.decays.tolist(),
        )

    def to_params(self) -> ClusterParams:
        return ClusterParams(base_rates=self.base_rates, amplitudes=self.amplitudes, decays=self.decays)


class ModelDocument(BaseModel):
    """JSON form of a mixture ("clusters") or a pair model ("blocks")"""
    prior: Union[List[float], List[List[float]]]
    clusters: Optional[List[ClusterDocument]] = None
    blocks: Optional[List[List[ClusterDocument]]] = None


def write_model(path: PathLike, model) -> Path:
    """Write a MixtureModel or PairClusterModel as JSON"""
    if isinstance(model, MixtureModel):
        document = ModelDocument(prior=model.prior.tolist(), clusters=[ClusterDocument.from_params(c) for c in model.clusters])
    else:
        document = ModelDocument(
            prior=model.prior.tolist(),
            blocks=[[ClusterDocument.from_params(b) for b in row] for row in model.params],
        )
    return atomic_write_text(path, document.model_dump_json(indent=2, exclude_none=True) + "\n")


def read_model(path: PathLike):
    """Read a model document; returns MixtureModel or PairClusterModel"""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            document = ModelDocument.model_validate_json(handle.read())
        except ValidationError as e:
            raise InvalidInputError(f"{path}: {e.errors()[0]['msg']}") from e
    if document.clusters is not None:
        return MixtureModel(clusters=[c.to_params() for c in document.clusters], prior=document.prior)
    if document.blocks is not None:
        from .network import PairClusterModel

        return PairClusterModel(params=[[b.to_params() for b in row] for row in document.blocks], prior=document.prior)
    raise InvalidInputError(f"{path}: model document has neither clusters nor blocks")


def write_trajectory(path: PathLike, trajectory: FitTrajectory) -> Path:
    return atomic_write_text(path, trajectory.to_frame().to_csv(index=False))


def write_json(path: PathLike, payload: BaseModel) -> Path:
    return atomic_write_text(path, payload.model_dump_json(indent=2) + "\n")
