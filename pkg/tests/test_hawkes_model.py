"""Tests for the Hawkes model module using direct execution (no mocks)."""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import quad

from ommhp.discretizer import bin_counts, interval_edges
from ommhp.errors import InvalidInputError
from ommhp.hawkes_model import (
    ClusterParams,
    DecayState,
    Event,
    EventSequence,
    KernelParams,
    MixtureModel,
    advance_decay_arrays,
    advance_decay_state,
    cluster_log_likelihood_discretized,
    compensator,
    event_intensities,
    hp_log_likelihood_continuous,
    hp_log_likelihood_discretized,
    intensity,
    interval_end_intensities,
    mixture_log_likelihood_discretized,
    spectral_radius,
)
from ommhp.simulator import simulate_hawkes


def univariate(mu=0.3, a=0.2, b=3.1):
    return ClusterParams(base_rates=[mu], amplitudes=[[a]], decays=[[b]])


def test_sequence_validation():
    """Test that malformed sequences are rejected."""
    with pytest.raises(ValidationError):
        EventSequence(times=[2.0, 1.0], types=[0, 0], horizon=10.0)
    with pytest.raises(ValidationError):
        EventSequence(times=[-1.0], types=[0], horizon=10.0)
    with pytest.raises(ValidationError):
        EventSequence(times=[11.0], types=[0], horizon=10.0)
    with pytest.raises(ValidationError):
        EventSequence(times=[1.0, 2.0], types=[0], horizon=10.0)

    seq = EventSequence.from_events([Event(time=3.0, event_type=1), Event(time=1.0, event_type=0)], horizon=5.0)
    assert seq.times.tolist() == [1.0, 3.0]
    assert seq.types.tolist() == [0, 1]
    assert len(seq.before(3.0)) == 1
    with pytest.raises(InvalidInputError):
        seq.check_types(1)


def test_cluster_params_validation():
    """Test parameter invariants and scalar decay broadcasting."""
    cluster = ClusterParams(base_rates=[0.3, 0.2], amplitudes=[[0.2, 0.1], [0.1, 0.2]], decays=3.1)
    assert cluster.decays.shape == (2, 2)
    assert np.all(cluster.decays == 3.1)
    assert cluster.kernel(0, 1) == KernelParams(amplitude=0.1, decay=3.1)

    rebuilt = ClusterParams.from_kernels(
        [0.3, 0.2], [[cluster.kernel(s, p) for p in range(2)] for s in range(2)]
    )
    assert np.array_equal(rebuilt.amplitudes, cluster.amplitudes)

    with pytest.raises(ValidationError):
        ClusterParams(base_rates=[0.0], amplitudes=[[0.1]], decays=[[1.0]])
    with pytest.raises(ValidationError):
        ClusterParams(base_rates=[0.3], amplitudes=[[-0.1]], decays=[[1.0]])
    with pytest.raises(ValidationError):
        ClusterParams(base_rates=[0.3], amplitudes=[[0.1]], decays=[[0.0]])
    with pytest.raises(ValidationError):
        ClusterParams(base_rates=[0.3, 0.2], amplitudes=[[0.1]], decays=1.0)


def test_mixture_prior_must_be_on_simplex(bivariate_cluster):
    """Test the prior invariant of a mixture."""
    MixtureModel(clusters=[bivariate_cluster, bivariate_cluster], prior=[0.25, 0.75])
    with pytest.raises(ValidationError):
        MixtureModel(clusters=[bivariate_cluster, bivariate_cluster], prior=[0.5, 0.6])
    with pytest.raises(ValidationError):
        MixtureModel(clusters=[bivariate_cluster], prior=[0.5, 0.5])


def test_intensity_examples():
    """Test the hand-evaluated intensity examples."""
    cluster = univariate()
    assert intensity(cluster, EventSequence.empty(10.0), 0, 4.2) == pytest.approx(0.3)

    one_event = EventSequence(times=[0.0], types=[0], horizon=10.0)
    assert intensity(cluster, one_event, 0, 1.0) == pytest.approx(0.3 + 0.2 * math.exp(-3.1), abs=1e-12)
    assert intensity(cluster, one_event, 0, 1.0) == pytest.approx(0.309010, abs=1e-6)

    quiet = univariate(a=0.0)
    busy = EventSequence(times=[0.5, 1.0, 2.0], types=[0, 0, 0], horizon=10.0)
    for t in (0.0, 0.7, 1.5, 9.0):
        assert intensity(quiet, busy, 0, t) == pytest.approx(0.3)


def test_intensity_counts_strict_past_only():
    """Test that an event at the evaluation time does not excite itself."""
    cluster = univariate()
    seq = EventSequence(times=[2.0], types=[0], horizon=10.0)
    assert intensity(cluster, seq, 0, 2.0) == pytest.approx(0.3)


def test_intensity_rejects_bad_target(bivariate_cluster):
    """Test that an invalid target type raises IndexError."""
    with pytest.raises(IndexError):
        intensity(bivariate_cluster, EventSequence.empty(1.0), 2, 0.5)
    with pytest.raises(IndexError):
        intensity(bivariate_cluster, EventSequence.empty(1.0), -1, 0.5)


def test_intensity_is_bounded_below_by_base_rate(rng, make_cluster, make_sequence):
    """Test intensity positivity over random instances."""
    for _ in range(20):
        cluster = make_cluster(rng, 3)
        seq = make_sequence(rng, 30, 3, 20.0)
        for t in rng.uniform(0.0, 20.0, size=5):
            for p in range(3):
                assert intensity(cluster, seq, p, t) >= cluster.base_rates.min()


def test_advance_pure_decay(bivariate_cluster):
    """Test that advancing without events scales every sum by exp(-b * delta)."""
    state = DecayState(
        sums=np.array([[1.0, 0.5], [0.25, 2.0]]),
        lag_sums=np.zeros((2, 2)),
        pending=np.zeros(2, dtype=np.int64),
        last_update_time=1.0,
    )
    update = advance_decay_state(state, bivariate_cluster, [], 1.75)
    assert np.allclose(update.state.sums, state.sums * np.exp(-bivariate_cluster.decays * 0.75))
    assert update.state.last_update_time == 1.75


def test_advance_event_at_target_time_is_pending():
    """Test that an event at to_time contributes nothing until time moves on."""
    cluster = univariate()
    start = DecayState.empty(1)
    update = advance_decay_state(start, cluster, [Event(time=2.0, event_type=0)], 2.0)
    assert update.intensities[0] == pytest.approx(0.3)
    assert update.state.pending.tolist() == [1]

    later = advance_decay_state(update.state, cluster, [], 3.0)
    assert later.intensities[0] == pytest.approx(0.3 + 0.2 * math.exp(-3.1))
    assert later.state.lag_sums[0, 0] == pytest.approx(math.exp(-3.1))


def test_advance_rejects_bad_windows(bivariate_cluster):
    """Test validation of the event window."""
    state = advance_decay_state(DecayState.empty(2), bivariate_cluster, [], 5.0).state
    with pytest.raises(InvalidInputError):
        advance_decay_state(state, bivariate_cluster, [Event(time=4.0, event_type=0)], 6.0)
    with pytest.raises(InvalidInputError):
        advance_decay_state(state, bivariate_cluster, [Event(time=7.0, event_type=0)], 6.0)
    with pytest.raises(InvalidInputError):
        advance_decay_state(
            state, bivariate_cluster,
            [Event(time=5.8, event_type=0), Event(time=5.5, event_type=1)], 6.0,
        )
    with pytest.raises(InvalidInputError):
        advance_decay_state(state, bivariate_cluster, [], 4.0)


def test_advance_accepts_events_at_origin(bivariate_cluster):
    """Test that a fresh state takes events at time zero."""
    events = [Event(time=0.0, event_type=0), Event(time=0.0, event_type=1)]
    update = advance_decay_state(DecayState.empty(2), bivariate_cluster, events, 1.0)
    expected = [intensity(bivariate_cluster, EventSequence.from_events(events, 2.0), p, 1.0) for p in range(2)]
    assert np.allclose(update.intensities, expected, rtol=1e-12)


def test_recursion_matches_direct_sum(rng, make_cluster, make_sequence):
    """Test the recursive update against direct summation on a 50-event sequence."""
    cluster = make_cluster(rng, 2)
    seq = make_sequence(rng, 50, 2, 25.0)
    events = seq.events
    state = DecayState.empty(2)
    checkpoints = np.linspace(0.5, 25.0, 17)
    lo = 0
    for t in checkpoints:
        hi = int(np.searchsorted(seq.times, t, side="right"))
        update = advance_decay_state(state, cluster, events[lo:hi], t)
        state, lo = update.state, hi
        direct = [intensity(cluster, seq, p, t) for p in range(2)]
        np.testing.assert_allclose(update.intensities, direct, rtol=1e-10)


def test_recursion_matches_direct_sum_on_long_sequence(rng, make_cluster, make_sequence):
    """Test the recursion on a 10^4-event sequence at 100 checkpoints."""
    cluster = make_cluster(rng, 2)
    seq = make_sequence(rng, 10_000, 2, 2_000.0)
    state = DecayState.empty(2)
    lo = 0
    for t in np.linspace(20.0, 2_000.0, 100):
        hi = int(np.searchsorted(seq.times, t, side="right"))
        state = advance_decay_arrays(state, cluster.decays, seq.times[lo:hi], seq.types[lo:hi], t)
        lo = hi
        direct = [intensity(cluster, seq, p, t) for p in range(2)]
        np.testing.assert_allclose(state.intensities(cluster), direct, rtol=1e-10)


def test_event_intensities_match_direct_sum(rng, make_cluster, make_sequence):
    """Test per-event intensities, including ties in time."""
    cluster = make_cluster(rng, 2)
    seq = make_sequence(rng, 30, 2, 10.0)
    times = np.sort(np.concatenate((seq.times, seq.times[:5])))
    tied = EventSequence(times=times, types=np.zeros(times.size, dtype=np.int64), horizon=10.0)
    for sample in (seq, tied):
        direct = [intensity(cluster, sample, p, t) for t, p in zip(sample.times, sample.types)]
        np.testing.assert_allclose(event_intensities(sample, cluster), direct, rtol=1e-10)


def test_continuous_log_likelihood_examples():
    """Test the hand-evaluated continuous log-likelihood examples."""
    assert hp_log_likelihood_continuous(EventSequence.empty(10.0), univariate(mu=0.5, a=0.0)) == pytest.approx(-5.0)

    one_event = EventSequence(times=[2.0], types=[0], horizon=10.0)
    value = hp_log_likelihood_continuous(one_event, univariate(mu=0.5, a=0.0))
    assert value == pytest.approx(math.log(0.5) - 5.0)
    assert value == pytest.approx(-5.693147, abs=1e-6)


def test_compensator_matches_quadrature(rng, make_cluster):
    """Test the closed-form compensator against adaptive quadrature."""
    cluster = make_cluster(rng, 2)
    seq = simulate_hawkes(cluster, 15.0, seed=3)
    assert len(seq) > 0

    def total_intensity(t):
        return sum(intensity(cluster, seq, p, t) for p in range(2))

    breaks = [t for t in np.unique(seq.times) if 0.0 < t < 15.0]
    numeric, _ = quad(total_intensity, 0.0, 15.0, points=breaks, limit=10 * len(breaks) + 50, epsabs=1e-11, epsrel=1e-11)
    assert compensator(seq, cluster) == pytest.approx(numeric, abs=1e-6)


def test_discretized_log_likelihood_examples():
    """Test the hand-evaluated discretized log-likelihood examples."""
    empty = bin_counts(EventSequence.empty(25.0), 25.0, num_types=1)
    assert hp_log_likelihood_discretized(empty, np.array([[0.5]]), 25.0) == pytest.approx(-12.5)

    two = bin_counts(EventSequence(times=[0.2, 0.6], types=[0, 0], horizon=1.0), 1.0, num_types=1)
    assert hp_log_likelihood_discretized(two, np.array([[0.5]]), 1.0) == pytest.approx(2 * math.log(0.5) - 0.5)
    assert hp_log_likelihood_discretized(two, np.array([[0.5]]), 1.0) == pytest.approx(-1.886294, abs=1e-6)


def test_discretized_log_likelihood_rejects_mismatches():
    """Test dimension and delta validation."""
    counts = bin_counts(EventSequence.empty(50.0), 25.0, num_types=2)
    with pytest.raises(InvalidInputError):
        hp_log_likelihood_discretized(counts, np.ones((2, 1)), 25.0)
    with pytest.raises(InvalidInputError):
        hp_log_likelihood_discretized(counts, np.ones((2, 2)), 10.0)


def test_discretized_uses_truncated_final_interval():
    """Test that a short final interval contributes its true length."""
    seq = EventSequence.empty(55.0)
    cluster = univariate(mu=0.5, a=0.0)
    assert cluster_log_likelihood_discretized(seq, cluster, 25.0) == pytest.approx(-0.5 * 55.0)


def test_interval_end_intensities_match_direct_sum(rng, make_cluster, make_sequence):
    """Test endpoint intensities against direct evaluation."""
    cluster = make_cluster(rng, 2)
    seq = make_sequence(rng, 40, 2, 52.0)
    _, ends = interval_edges(52.0, 5.0)
    got = interval_end_intensities(seq, cluster, 5.0)
    direct = np.array([[intensity(cluster, seq, p, t) for p in range(2)] for t in ends])
    np.testing.assert_allclose(got, direct, rtol=1e-10)


def test_discretized_converges_as_delta_shrinks(rng, make_cluster):
    """Test the small-delta limit of the discretized log-likelihood on 20 random stationary sequences.

    Endpoint intensities include the interval's own events, so as delta goes
    to 0 each event adds log(1 + a[p, p] / lambda_p(t)) to the continuous
    log-likelihood. With a = 0 the two agree for every delta.
    """
    checked = 0
    while checked < 20:
        cluster = make_cluster(rng, 2)
        if spectral_radius(cluster) >= 0.9:
            continue
        seq = simulate_hawkes(cluster, 20.0, seed=checked)
        own = cluster.amplitudes[seq.types, seq.types]
        limit = hp_log_likelihood_continuous(seq, cluster) + np.sum(np.log1p(own / event_intensities(seq, cluster)))
        errors = [abs(cluster_log_likelihood_discretized(seq, cluster, d) - limit) for d in (0.1, 0.01, 0.001)]
        assert errors[0] > errors[1] > errors[2]
        checked += 1

    poisson = ClusterParams(base_rates=[0.4, 0.9], amplitudes=np.zeros((2, 2)), decays=3.1)
    seq = simulate_hawkes(poisson, 30.0, seed=11)
    for d in (5.0, 1.0, 0.2):
        assert cluster_log_likelihood_discretized(seq, poisson, d) == pytest.approx(
            hp_log_likelihood_continuous(seq, poisson), abs=1e-9
        )


def test_mixture_log_likelihood_degenerate_cases(bivariate_cluster):
    """Test K=1 and identical-cluster mixtures."""
    seq = simulate_hawkes(bivariate_cluster, 100.0, seed=5)
    single = cluster_log_likelihood_discretized(seq, bivariate_cluster, 25.0)
    assert mixture_log_likelihood_discretized(seq, MixtureModel.uniform([bivariate_cluster]), 25.0) == pytest.approx(single)
    twins = MixtureModel.uniform([bivariate_cluster, bivariate_cluster.copy_params()])
    assert mixture_log_likelihood_discretized(seq, twins, 25.0) == pytest.approx(single, rel=1e-12)


def _longdouble_cluster_loglik(seq, cluster, delta):
    starts, ends = interval_edges(seq.horizon, delta)
    counts = bin_counts(seq, delta, num_types=cluster.num_types).counts
    mu = cluster.base_rates.astype(np.longdouble)
    a = cluster.amplitudes.astype(np.longdouble)
    b = cluster.decays.astype(np.longdouble)
    times = seq.times.astype(np.longdouble)
    total = np.longdouble(0.0)
    for tau, (start, end) in enumerate(zip(starts, ends)):
        end_ld = np.longdouble(end)
        length = end_ld - np.longdouble(start)
        past = times < end_ld
        for p in range(cluster.num_types):
            lam = mu[p] + np.sum(a[seq.types[past], p] * np.exp(-b[seq.types[past], p] * (end_ld - times[past])))
            total += counts[tau, p] * np.log(lam) - length * lam
    return total


def test_mixture_log_likelihood_matches_extended_precision(two_cluster_model):
    """Test the log-sum-exp mixture value against a long-double oracle."""
    seq = simulate_hawkes(two_cluster_model.clusters[0], 50.0, seed=9)
    per_cluster = np.array([_longdouble_cluster_loglik(seq, c, 2.5) for c in two_cluster_model.clusters])
    top = per_cluster.max()
    oracle = top + np.log(np.sum(two_cluster_model.prior.astype(np.longdouble) * np.exp(per_cluster - top)))
    value = mixture_log_likelihood_discretized(seq, two_cluster_model, 2.5)
    assert value == pytest.approx(float(oracle), rel=1e-12)


def test_spectral_radius(bivariate_cluster):
    """Test the branching spectral radius in one and two dimensions."""
    assert spectral_radius(univariate()) == pytest.approx(0.2 / 3.1)
    assert spectral_radius(bivariate_cluster) == pytest.approx(0.3 / 3.1)
