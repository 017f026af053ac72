"""Tests for the command line focusing on interface rather than implementation."""

import unittest.mock as mock

import numpy as np
import pytest

import ommhp_cli
from ommhp.errors import InvalidInputError, NumericError, ResourceLimitError
from ommhp.event_log import read_labels, write_event_log
from ommhp.hawkes_model import EventSequence
from ommhp.learner import FitTrajectory, IntervalRecord


@pytest.fixture
def events_file(tmp_path):
    """Create a three-sequence event log."""
    seqs = [EventSequence(times=[1.0, 4.0], types=[0, 1], horizon=20.0) for _ in range(3)]
    return write_event_log(tmp_path / "events.jsonl", seqs, num_types=2)


@pytest.fixture
def mock_fit(two_cluster_model):
    """Patch fit_online with a canned trajectory and state."""
    trajectory = FitTrajectory(records=[IntervalRecord(interval=1, elbo=-7.5, prior=[0.4, 0.6])])
    state = mock.Mock(alpha=np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]]), model=two_cluster_model)
    with mock.patch.object(ommhp_cli, "fit_online", return_value=(trajectory, state)) as patched:
        yield patched


def test_fit_passes_flags_to_learner(mock_fit, events_file, tmp_path):
    """Test that fit flags reach the learner settings."""
    code = ommhp_cli.main([
        "fit", "--events", str(events_file), "--out-dir", str(tmp_path / "out"),
        "--k", "2", "--delta", "5", "--m-step", "em", "--learn-decay", "learned", "--seed", "11",
    ])
    assert code == 0
    sequences, learner = mock_fit.call_args.args
    assert len(sequences) == 3
    assert learner.num_clusters == 2
    assert learner.num_types == 2
    assert learner.delta == 5.0
    assert learner.m_step == "em"
    assert learner.learn_decay == "learned"
    assert learner.seed == 11
    assert mock_fit.call_args.kwargs["ground_truth"] is None

    assert read_labels(tmp_path / "out" / "assignments.csv") == (["s0000", "s0001", "s0002"], [0, 1, 0])
    assert (tmp_path / "out" / "model.json").is_file()
    assert (tmp_path / "out" / "trajectory.csv").read_text().startswith("interval,elbo,pi_0,pi_1")


def test_environment_overrides_reach_learner(mock_fit, events_file, tmp_path, monkeypatch):
    """Test that OMMHP_* variables are applied and flags still win."""
    monkeypatch.setenv("OMMHP_K", "2")
    monkeypatch.setenv("OMMHP_DELTA", "4")
    monkeypatch.setenv("OMMHP_SEED", "5")
    assert ommhp_cli.main(["fit", "--events", str(events_file), "--out-dir", str(tmp_path), "--seed", "6"]) == 0
    learner = mock_fit.call_args.args[1]
    assert learner.delta == 4.0
    assert learner.seed == 6


def test_config_file_reaches_learner(mock_fit, events_file, tmp_path):
    """Test that a config file supplies values the flags leave unset."""
    config = tmp_path / "run.env"
    config.write_text("K=2\nDELTA=2.5\nPRECONDITIONER=none\n")
    assert ommhp_cli.main(["fit", "--config", str(config), "--events", str(events_file), "--out-dir", str(tmp_path)]) == 0
    learner = mock_fit.call_args.args[1]
    assert learner.delta == 2.5
    assert learner.preconditioner == "none"


@pytest.mark.parametrize(
    "error, code",
    [
        (InvalidInputError("bad input"), 1),
        (NumericError("non-finite gradient"), 2),
        (ResourceLimitError("event cap reached"), 2),
        (PermissionError("read-only"), 3),
    ],
)
def test_exit_codes(error, code, tmp_path, capsys):
    """Test the mapping from failures to exit codes."""
    failing = mock.Mock(side_effect=error)
    with mock.patch.dict(ommhp_cli.COMMANDS, {"simulate": failing}):
        assert ommhp_cli.main(["simulate", "--out-dir", str(tmp_path)]) == code
    assert failing.call_count == 1
    assert str(error) in capsys.readouterr().err


def test_simulate_writes_dataset(tmp_path, small_d1_dataset):
    """Test that simulate writes what the simulator returns."""
    with mock.patch.object(ommhp_cli, "simulate_mixture", return_value=small_d1_dataset) as patched:
        code = ommhp_cli.main(["simulate", "--out-dir", str(tmp_path), "--n", "2", "--horizon", "100", "--seed", "7"])
    assert code == 0
    scenario = patched.call_args.args[0]
    assert scenario.sequences_per_cluster == 2
    assert scenario.horizon == 100.0
    assert scenario.seed == 7
    ids, labels = read_labels(tmp_path / "labels.csv")
    assert ids == small_d1_dataset.ids
    assert labels == small_d1_dataset.labels


def test_fit_dispatches_network_logs(mocker, tmp_path):
    """Test that a log with edges goes to the network learner."""
    seqs = [EventSequence(times=[1.0], types=[0], horizon=10.0), EventSequence(times=[2.0], types=[0], horizon=10.0)]
    events = write_event_log(tmp_path / "net.jsonl", seqs, edges=[(0, 1), (1, 0)], num_types=1, num_nodes=2)
    sequence_fit = mocker.patch.object(ommhp_cli, "fit_online")
    network_fit = mocker.spy(ommhp_cli, "fit_network_online")

    code = ommhp_cli.main([
        "fit", "--events", str(events), "--out-dir", str(tmp_path / "out"), "--delta", "5", "--undirected",
    ])
    assert code == 0
    assert not sequence_fit.called
    log, config = network_fit.call_args.args
    assert log.edges == [(0, 1)]
    assert config.num_clusters == 2
    ids, _ = read_labels(tmp_path / "out" / "assignments.csv")
    assert ids == ["0", "1"]
