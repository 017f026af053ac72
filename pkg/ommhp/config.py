"""
Run configuration for the ommhp command line.

Values are layered: field defaults, then a flat KEY=VALUE config file, then
OMMHP_* environment variables, then command-line flags.

Example config file::

    K=3
    DELTA=25
    SCENARIO=d2
    M_STEP=sgd
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .learner import LearnerConfig, StepSchedule
from .network import NetworkLearnerConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "OMMHP_"


class RunConfig(BaseModel):
    """Parameters shared by every subcommand"""
    model_config = ConfigDict(extra="forbid")

    # model and learner
    k: int = Field(2, ge=1)
    num_types: Optional[int] = Field(None, ge=1)
    delta: float = Field(25.0, gt=0)
    horizon: float = Field(1000.0, gt=0)
    schedule: Literal["inverse_sqrt", "constant", "inverse"] = "inverse_sqrt"
    eta0: float = Field(1.0, gt=0)
    m_step: Literal["sgd", "em"] = "sgd"
    learn_decay: Literal["fixed", "learned"] = "fixed"
    decay: float = Field(3.1, gt=0)
    # "none" takes raw gradient steps; pair it with a small eta0
    preconditioner: Literal["fisher", "none"] = "fisher"
    em_iterations: int = Field(1, ge=1)
    em_window: Optional[float] = Field(None, gt=0)
    sweeps: int = Field(1, ge=1)
    snapshot_every: int = Field(0, ge=0)
    seed: int = Field(0, ge=0)

    # synthetic data
    scenario: str = "d1"
    n: int = Field(10, ge=1)
    max_events: int = Field(10_000_000, ge=1)

    # files
    out_dir: Path = Path(".")
    events: Optional[Path] = None
    labels: Optional[Path] = None
    assignments: Optional[Path] = None
    truth_model: Optional[Path] = None
    estimated_model: Optional[Path] = None
    undirected: bool = False

    # benchmark grid
    bench_n: List[int] = Field(default_factory=lambda: [10, 20, 40])
    bench_p: List[int] = Field(default_factory=lambda: [2])
    bench_k: List[int] = Field(default_factory=lambda: [2])
    bench_horizon: float = Field(200.0, gt=0)
    bench_repeats: int = Field(1, ge=1)

    log_level: str = "INFO"
    log_file: Optional[Path] = None

    @field_validator("bench_n", "bench_p", "bench_k", mode="before")
    @classmethod
    def _split_list(cls, value):
        if isinstance(value, str):
            return [int(v) for v in value.replace(" ", "").split(",") if v]
        return value

    @field_validator("bench_n", "bench_p", "bench_k")
    @classmethod
    def _positive(cls, value: List[int]):
        if not value or any(v < 1 for v in value):
            raise ValueError("grid values must be positive integers")
        return value

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str):
        value = value.upper()
        if value not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {value}")
        return value

    @model_validator(mode="after")
    def _check(self):
        if self.delta > self.horizon:
            raise ValueError(f"delta {self.delta} exceeds horizon {self.horizon}")
        return self

    def learner_config(self, num_types: int) -> LearnerConfig:
        return LearnerConfig(**self._learner_fields(num_types))

    def network_learner_config(self, num_types: int) -> NetworkLearnerConfig:
        return NetworkLearnerConfig(sweeps=self.sweeps, **self._learner_fields(num_types))

    def _learner_fields(self, num_types: int) -> Dict[str, Any]:
        return dict(
            num_clusters=self.k,
            num_types=self.num_types or num_types,
            delta=self.delta,
            schedule=StepSchedule(rule=self.schedule, eta0=self.eta0),
            m_step=self.m_step,
            learn_decay=self.learn_decay,
            decay=self.decay,
            preconditioner=self.preconditioner,
            em_iterations=self.em_iterations,
            em_window=self.em_window,
            snapshot_every=self.snapshot_every,
            seed=self.seed,
        )


def _normalize_keys(values: Mapping[str, Optional[str]]) -> Dict[str, str]:
    return {key.strip().lower().replace("-", "_"): value for key, value in values.items() if value not in (None, "")}


def environment_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """OMMHP_* variables with the prefix stripped and keys lower-cased"""
    environ = os.environ if environ is None else environ
    return _normalize_keys({key[len(ENV_PREFIX):]: value for key, value in environ.items() if key.startswith(ENV_PREFIX)})


def load_run_config(
    config_file: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Build a RunConfig from defaults, file, environment and flags

    Args:
        config_file: Flat KEY=VALUE file (optional)
        overrides: Flag values; None entries are ignored
        environ: Environment mapping (default: os.environ)

    Returns:
        The validated RunConfig

    Raises:
        FileNotFoundError: If config_file does not exist
        pydantic.ValidationError: If a value is out of range or a key is unknown
    """
    values: Dict[str, Any] = {}
    if config_file is not None:
        if not Path(config_file).is_file():
            raise FileNotFoundError(f"config file not found: {config_file}")
        from_file = _normalize_keys(dotenv_values(config_file))
        logger.debug(f"Config file {config_file}: {sorted(from_file)}")
        values.update(from_file)
    values.update(environment_overrides(environ))
    if overrides:
        values.update({key: value for key, value in overrides.items() if value is not None})
    return RunConfig(**values)
