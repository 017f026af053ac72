#!/usr/bin/env python3
"""
ommhp command line

Simulate labeled mixture data, fit the online mixture learner, evaluate
assignments and benchmark runtime scaling. Every subcommand reads a RunConfig
layered from defaults, an optional --config file, OMMHP_* environment
variables and flags.

Exit codes: 0 success, 1 validation or parse error, 2 numeric failure,
3 I/O failure.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import BaseModel

from ommhp.config import RunConfig, load_run_config
from ommhp.errors import InvalidInputError, exit_code_for
from ommhp.event_log import (
    atomic_write_text,
    read_event_log,
    read_labels,
    read_model,
    write_event_log,
    write_json,
    write_labels,
    write_model,
    write_trajectory,
)
from ommhp.hawkes_model import MixtureModel
from ommhp.learner import fit_online, hard_assignments
from ommhp.logging_utils import configure_logging, log_execution_time
from ommhp.metrics import adjusted_rand_index, aligned_errors
from ommhp.network import fit_network_online
from ommhp.simulator import SCENARIOS, MixtureScenario, scaling_scenario, simulate_mixture

VERSION = "0.1.0"

logger = logging.getLogger("ommhp.cli")


# Models for command results
class SimulateResult(BaseModel):
    events: str
    labels: str
    truth_model: str
    num_sequences: int
    num_events: int


class FitResult(BaseModel):
    trajectory: str
    model: str
    assignments: str
    num_intervals: int
    final_elbo: float
    ari: Optional[float] = None


class ClusterError(BaseModel):
    cluster: int
    relerr_mu: float
    relerr_a: float


class EvalReport(BaseModel):
    num_sequences: int
    ari: float
    cluster_errors: Optional[List[ClusterError]] = None

    def to_text(self) -> str:
        lines = [f"sequences: {self.num_sequences}", f"ARI: {self.ari:.6f}"]
        for e in self.cluster_errors or []:
            lines.append(f"cluster {e.cluster}: relerr_mu={e.relerr_mu:.6f} relerr_a={e.relerr_a:.6f}")
        return "\n".join(lines)


def build_scenario(config: RunConfig) -> MixtureScenario:
    """Named scenario from the config, or a JSON scenario file when scenario is a path"""
    if config.scenario in SCENARIOS:
        return SCENARIOS[config.scenario](sequences_per_cluster=config.n, horizon=config.horizon, seed=config.seed)
    path = Path(config.scenario)
    if not path.is_file():
        raise InvalidInputError(f"unknown scenario {config.scenario!r}; use one of {sorted(SCENARIOS)} or a JSON file")
    truth = read_model(path)
    return MixtureScenario(
        clusters=truth.clusters,
        sequences_per_cluster=config.n,
        horizon=config.horizon,
        seed=config.seed,
        max_events=config.max_events,
    )


@log_execution_time
def cmd_simulate(config: RunConfig) -> SimulateResult:
    """Write events.jsonl, labels.csv and truth_model.json to out_dir"""
    scenario = build_scenario(config)
    dataset = simulate_mixture(scenario)
    out = config.out_dir
    events = write_event_log(out / "events.jsonl", dataset.sequences, dataset.ids, num_types=scenario.num_types)
    labels = write_labels(out / "labels.csv", dataset.ids, dataset.labels)
    truth = write_model(out / "truth_model.json", scenario.mixture())
    return SimulateResult(
        events=str(events),
        labels=str(labels),
        truth_model=str(truth),
        num_sequences=len(dataset),
        num_events=sum(len(s) for s in dataset.sequences),
    )


@log_execution_time
def cmd_fit(config: RunConfig) -> FitResult:
    """Fit the sequence learner, or the network learner when the log has edges"""
    if config.events is None:
        raise InvalidInputError("fit needs --events")
    log = read_event_log(config.events, horizon=config.horizon, num_types=config.num_types)
    out = config.out_dir

    true_labels = None
    if config.labels is not None and not log.is_network:
        label_ids, labels = read_labels(config.labels)
        by_id = dict(zip(label_ids, labels))
        missing = [i for i in log.ids if i not in by_id]
        if missing:
            raise InvalidInputError(
                f"labels file {config.labels} has no label for sequence {missing[0]!r} ({len(missing)} missing)"
            )
        true_labels = [by_id[i] for i in log.ids]

    truth = None
    if config.truth_model is not None:
        truth = read_model(config.truth_model)

    if log.is_network:
        network = log.to_network(undirected=config.undirected)
        trajectory, state = fit_network_online(network, config.network_learner_config(log.num_types))
        model = state.model
        ids = [str(g) for g in range(state.alpha.shape[0])]
    else:
        ground_truth = truth if isinstance(truth, MixtureModel) and truth.num_clusters == config.k else None
        trajectory, state = fit_online(log.sequences, config.learner_config(log.num_types), ground_truth=ground_truth)
        model = state.model
        ids = log.ids

    assignments = hard_assignments(state.alpha)
    result = FitResult(
        trajectory=str(write_trajectory(out / "trajectory.csv", trajectory)),
        model=str(write_model(out / "model.json", model)),
        assignments=str(write_labels(out / "assignments.csv", ids, assignments.tolist())),
        num_intervals=len(trajectory),
        final_elbo=trajectory.records[-1].elbo,
    )

    if true_labels is not None:
        result.ari = adjusted_rand_index(true_labels, assignments.tolist())
        logger.info(f"ARI against {config.labels}: {result.ari:.4f}")
    return result


@log_execution_time
def cmd_eval(config: RunConfig) -> EvalReport:
    """ARI of assignments against labels, plus aligned errors when both models are given"""
    if config.assignments is None or config.labels is None:
        raise InvalidInputError("eval needs --assignments and --labels")
    est_ids, est = read_labels(config.assignments)
    true_ids, truth = read_labels(config.labels)
    if len(est_ids) != len(true_ids):
        raise InvalidInputError(f"{len(est_ids)} assignments for {len(true_ids)} labels")
    if set(est_ids) == set(true_ids):
        by_id = dict(zip(est_ids, est))
        est = [by_id[i] for i in true_ids]

    report = EvalReport(num_sequences=len(truth), ari=adjusted_rand_index(truth, est))
    if config.truth_model is not None and config.estimated_model is not None:
        true_model = read_model(config.truth_model)
        estimated = read_model(config.estimated_model)
        errors = aligned_errors(estimated, true_model.clusters)
        report.cluster_errors = [
            ClusterError(cluster=j, relerr_mu=e.base_rates, relerr_a=e.amplitudes) for j, e in enumerate(errors)
        ]
    write_json(config.out_dir / "eval.json", report)
    return report


@log_execution_time
def cmd_bench(config: RunConfig) -> pd.DataFrame:
    """
    Time fit_online over the (K, P, n) grid and write bench.csv

    Simulation is excluded from the timings. For every (K, P) the report adds
    the slope of a linear fit of seconds against the number of sequences and
    the max/min ratio of the per-sequence times.
    """
    rows: List[Dict[str, Any]] = []
    for k in config.bench_k:
        for p in config.bench_p:
            for n in config.bench_n:
                scenario = scaling_scenario(k, p, n, horizon=config.bench_horizon, seed=config.seed)
                dataset = simulate_mixture(scenario)
                learner = config.learner_config(p).model_copy(update={"num_clusters": k, "num_types": p})
                timings = []
                for _ in range(config.bench_repeats):
                    start = time.perf_counter()
                    trajectory, state = fit_online(dataset, learner, ground_truth=scenario.mixture())
                    timings.append(time.perf_counter() - start)
                seconds = min(timings)
                final = trajectory.records[-1]
                rows.append({
                    "k": k,
                    "p": p,
                    "n": n,
                    "num_sequences": len(dataset),
                    "seconds": seconds,
                    "seconds_per_sequence": seconds / len(dataset),
                    "ari": adjusted_rand_index(dataset.labels, hard_assignments(state.alpha).tolist()),
                    "relerr_mu": float(np.mean(final.relerr_mu)),
                    "relerr_a": float(np.mean(final.relerr_a)),
                })
                logger.info(f"bench K={k} P={p} n={n}: {seconds:.3f}s")

    frame = pd.DataFrame(rows)
    frame["slope"] = np.nan
    frame["ratio"] = np.nan
    for _, group in frame.groupby(["k", "p"]):
        if len(group) > 1:
            frame.loc[group.index, "slope"] = np.polyfit(group["num_sequences"], group["seconds"], 1)[0]
        per_seq = group["seconds_per_sequence"]
        frame.loc[group.index, "ratio"] = per_seq.max() / per_seq.min()

    atomic_write_text(config.out_dir / "bench.csv", frame.to_csv(index=False))
    return frame


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat KEY=VALUE config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", type=Path)
    common.add_argument("--k", type=int, help="number of clusters")
    common.add_argument("--delta", type=float, help="interval length")
    common.add_argument("--horizon", type=float)
    common.add_argument("--num-types", type=int)
    common.add_argument("--m-step", choices=["sgd", "em"])
    common.add_argument("--learn-decay", choices=["fixed", "learned"])
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    common.add_argument("--log-file", type=Path)

    parser = argparse.ArgumentParser(
        prog="ommhp",
        description="Online learning of mixtures of multivariate Hawkes processes. "
        "Environment variables OMMHP_<FIELD> override config-file values.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", parents=[common], help="simulate a labeled dataset")
    simulate.add_argument("--scenario", help="d1, d2 or a model JSON file")
    simulate.add_argument("--n", type=int, help="sequences per cluster")

    fit = sub.add_parser("fit", parents=[common], help="fit the online learner")
    fit.add_argument("--events", type=Path)
    fit.add_argument("--labels", type=Path)
    fit.add_argument("--truth-model", type=Path)
    fit.add_argument("--undirected", action="store_true", default=None)

    evaluate = sub.add_parser("eval", parents=[common], help="evaluate assignments")
    evaluate.add_argument("--assignments", type=Path)
    evaluate.add_argument("--labels", type=Path)
    evaluate.add_argument("--truth-model", type=Path)
    evaluate.add_argument("--estimated-model", type=Path)

    bench = sub.add_parser("bench", parents=[common], help="benchmark runtime scaling")
    bench.add_argument("--bench-n", help="comma-separated sequences per cluster")
    bench.add_argument("--bench-p", help="comma-separated numbers of types")
    bench.add_argument("--bench-k", help="comma-separated numbers of clusters")
    bench.add_argument("--bench-horizon", type=float)
    bench.add_argument("--bench-repeats", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}

    try:
        config = load_run_config(args.config, overrides)
        configure_logging(config.log_level, add_file_handler=config.log_file is not None,
                          log_file=str(config.log_file) if config.log_file else None)
        result = COMMANDS[args.command](config)
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)

    if isinstance(result, EvalReport):
        print(result.to_text())
    elif isinstance(result, BaseModel):
        print(json.dumps(result.model_dump(), indent=2))
    else:
        print(result.to_string(index=False))
    return 0


if __name__ == "__main__":
    sys.exit(main())
