import math

import numpy as np
import pytest
from scipy.stats import invgamma, norm

from trajlink.spatiotemporal import (
    UNKNOWN,
    Gate,
    GateEvent,
    PairTimeState,
    TransitionMatrix,
    TravelTimeModel,
    detect_high_confidence,
    p2_spatial,
    p3_temporal,
    travel_time_logpdf,
    travel_time_mode,
    update_spatial,
    update_temporal,
)


# ---------------------------------------------------------------- gates


def test_gate_rejects_degenerate_segment():
    with pytest.raises(ValueError, match="distinct"):
        Gate(id="g", sensor_id="s", p0=(1.0, 2.0), p1=(1.0, 2.0))


def test_gate_distance_to_segment():
    g = Gate(id="g", sensor_id="s", p0=(0.0, 0.0), p1=(2.0, 0.0))
    assert g.distance_to((1.0, 0.0)) == 0.0
    assert abs(g.distance_to((1.0, 0.7)) - 0.7) < 1e-12
    # past the endpoint the distance clamps to the corner
    assert abs(g.distance_to((3.0, 0.0)) - 1.0) < 1e-12
    assert abs(g.distance_to((-3.0, 4.0)) - 5.0) < 1e-12


# ---------------------------------------------------------------- P2


def _named(n):
    return tuple(f"g{i + 1}" for i in range(n))


def test_transition_matrix_validation():
    with pytest.raises(ValueError, match="at least one gate"):
        TransitionMatrix(gates=(), counts=np.zeros((0, 0)))
    with pytest.raises(ValueError, match="shape"):
        TransitionMatrix(gates=_named(2), counts=np.zeros((2, 3)))
    with pytest.raises(ValueError, match="non-negative"):
        TransitionMatrix(gates=_named(2), counts=np.array([[1.0, -1.0], [0.0, 0.0]]))


def test_uniform_matrix_gives_one_over_g():
    q = TransitionMatrix.uniform(_named(4))
    assert p2_spatial("g1", "g2", q) == 0.25


def test_p2_zero_count_with_populated_column():
    counts = np.zeros((4, 4))
    counts[0, 1] = 3.0
    counts[2, 1] = 1.0
    q = TransitionMatrix(gates=_named(4), counts=counts)
    assert p2_spatial("g1", "g2", q) == 0.75
    assert p2_spatial("g3", "g2", q) == 0.25
    assert p2_spatial("g4", "g2", q) == 0.0


def test_p2_unknown_gate_or_empty_column_is_uniform():
    counts = np.zeros((4, 4))
    counts[0, 1] = 3.0
    q = TransitionMatrix(gates=_named(4), counts=counts)
    assert p2_spatial(UNKNOWN, "g2", q) == 0.25
    assert p2_spatial("g1", UNKNOWN, q) == 0.25
    assert p2_spatial("nope", "g2", q) == 0.25
    # nothing ever arrived at g3
    assert p2_spatial("g1", "g3", q) == 0.25


def test_p2_column_sums_to_one():
    rng = np.random.default_rng(0)
    q = TransitionMatrix(gates=_named(5), counts=rng.integers(0, 9, size=(5, 5)).astype(float) + 0.1)
    for j in q.gates:
        total = sum(p2_spatial(i, j, q) for i in q.gates)
        assert abs(total - 1.0) < 1e-12


def test_update_spatial_single_transit():
    q0 = TransitionMatrix.uniform(("a", "b"))
    q1 = update_spatial(q0, [("a", "b")])
    assert abs(p2_spatial("a", "b", q1) - 2.0 / 3.0) < 1e-12
    # value-returning: the input matrix is untouched
    assert q0.counts[0, 1] == 1.0


def test_update_spatial_empty_and_unknown():
    q0 = TransitionMatrix.uniform(_named(3))
    assert np.array_equal(update_spatial(q0, []).counts, q0.counts)
    q1 = update_spatial(q0, [("g1", "nope"), (UNKNOWN, "g2"), ("g1", "g2", 7.5)])
    want = q0.counts.copy()
    want[0, 1] += 1.0
    assert np.array_equal(q1.counts, want)


def test_update_spatial_recount_oracle():
    rng = np.random.default_rng(1)
    gates = _named(4)
    samples = [(gates[rng.integers(4)], gates[rng.integers(4)]) for _ in range(100)]
    q = update_spatial(TransitionMatrix.uniform(gates, pseudo_count=0.0), samples)

    tally = np.zeros((4, 4))
    for g1, g2 in samples:
        tally[gates.index(g1), gates.index(g2)] += 1.0
    assert np.array_equal(q.counts, tally)

    shuffled = [samples[i] for i in rng.permutation(len(samples))]
    q2 = update_spatial(TransitionMatrix.uniform(gates, pseudo_count=0.0), shuffled)
    assert np.array_equal(q2.counts, q.counts)


# ---------------------------------------------------------------- P3


def _four_symmetric_samples(mean=10.0, sumsq=6.0):
    s = math.sqrt(sumsq / 4.0)
    return [mean - s, mean + s, mean - s, mean + s]


def test_update_temporal_conjugate_arithmetic():
    model = TravelTimeModel()
    xs = _four_symmetric_samples()
    m2 = update_temporal(model, ("a", "b"), xs)
    st = m2.state(("a", "b"))
    assert st.n == 4
    assert abs(st.mean - 10.0) < 1e-12
    assert st.var_a == 5.0
    assert abs(st.var_b - 5.0) < 1e-9
    # below n_min the pair still reports the uniform density
    assert st.is_uniform
    assert m2.state(("other", "pair")).is_uniform


def test_update_temporal_switches_at_n_min():
    model = TravelTimeModel()
    m2 = update_temporal(model, ("a", "b"), _four_symmetric_samples())
    m3 = update_temporal(m2, ("a", "b"), [10.0])
    st = m3.state(("a", "b"))
    assert st.n == 5
    assert not st.is_uniform
    assert st.shape > 2.0 and st.scale > 0.0
    # moment matching: density mean equals the running sample mean
    assert abs(st.scale / (st.shape - 1.0) - st.mean) < 1e-9


def test_update_temporal_rejects_nonpositive():
    model = TravelTimeModel()
    for bad in ([0.0], [5.0, -1.0]):
        with pytest.raises(ValueError, match="positive"):
            update_temporal(model, ("a", "b"), bad)


def test_update_temporal_empty_is_noop():
    model = TravelTimeModel()
    assert update_temporal(model, ("a", "b"), []) is model


def _posterior_mean_by_quadrature(a0, b0, xs, mean):
    """E[sigma^2 | data] by trapezoid integration of prior times likelihood."""
    v = np.linspace(1e-4, 80.0, 120_000)
    logw = invgamma.logpdf(v, a0, scale=b0)
    logw = logw + norm.logpdf(np.asarray(xs)[:, None], mean, np.sqrt(v[None, :])).sum(axis=0)
    w = np.exp(logw - logw.max())
    return float(np.trapezoid(v * w, v) / np.trapezoid(w, v))


def test_posterior_mean_matches_grid_integration():
    model = TravelTimeModel()
    xs = _four_symmetric_samples()
    st = update_temporal(model, ("a", "b"), xs).state(("a", "b"))
    conjugate = st.var_b / (st.var_a - 1.0)
    assert abs(conjugate - 1.25) < 1e-9
    grid_mean = _posterior_mean_by_quadrature(model.prior_a, model.prior_b, xs, st.mean)
    assert abs(grid_mean - conjugate) / conjugate < 1e-3


def test_posterior_mean_random_configs_vs_quadrature():
    rng = np.random.default_rng(2)
    for _ in range(3):
        a0 = float(rng.uniform(2.5, 6.0))
        b0 = float(rng.uniform(1.0, 5.0))
        xs = rng.normal(12.0, 1.2, size=int(rng.integers(3, 9)))
        xs = np.abs(xs) + 0.1
        model = TravelTimeModel(prior_a=a0, prior_b=b0)
        st = update_temporal(model, ("a", "b"), xs).state(("a", "b"))
        conjugate = st.var_b / (st.var_a - 1.0)
        grid_mean = _posterior_mean_by_quadrature(a0, b0, xs, st.mean)
        assert abs(grid_mean - conjugate) / conjugate < 1e-3


def test_predictive_mode_recovers_normal_center():
    rng = np.random.default_rng(35)
    xs = rng.normal(10.0, 1.0, size=200)
    model = update_temporal(TravelTimeModel(), ("a", "b"), xs)
    st = model.state(("a", "b"))
    assert abs(travel_time_mode(st) - 10.0) <= 0.2


def test_travel_time_logpdf_uniform():
    st = PairTimeState()
    assert st.is_uniform
    assert travel_time_logpdf(st, 50.0, dt_max=120.0) == -math.log(120.0)
    assert travel_time_logpdf(st, 120.0, dt_max=120.0) == -math.log(120.0)
    assert travel_time_logpdf(st, 121.0, dt_max=120.0) == -math.inf
    assert travel_time_logpdf(st, 0.0, dt_max=120.0) == -math.inf


def test_travel_time_logpdf_matches_scipy():
    st = PairTimeState(n=9, mean=2.0, shape=3.0, scale=4.0, location=0.0)
    for x in (0.5, 1.0, 2.0, 7.5):
        want = invgamma.logpdf(x, 3.0, loc=0.0, scale=4.0)
        assert abs(travel_time_logpdf(st, x) - want) < 1e-10
    assert travel_time_logpdf(st, 0.0) == -math.inf


def test_travel_time_mode_formula():
    st = PairTimeState(n=9, mean=2.0, shape=3.0, scale=4.0, location=0.0)
    assert travel_time_mode(st) == 1.0
    shifted = PairTimeState(n=9, mean=5.0, shape=3.0, scale=4.0, location=2.5)
    assert travel_time_mode(shifted) == 3.5


def test_p3_uniform_pair():
    model = TravelTimeModel(dt_max=120.0)
    assert p3_temporal(50.0, model, ("a", "b")) == 1.0
    assert p3_temporal(120.0, model, ("a", "b")) == 1.0
    assert p3_temporal(121.0, model, ("a", "b")) == 0.0


def test_p3_rejects_non_causal():
    model = TravelTimeModel()
    for dt in (0.0, -3.0):
        with pytest.raises(ValueError, match="non-causal"):
            p3_temporal(dt, model, ("a", "b"))


def test_p3_informed_pair_against_density_ratio():
    st = PairTimeState(n=9, mean=2.0, shape=3.0, scale=4.0, location=0.0)
    model = TravelTimeModel(pairs={("a", "b"): st})
    assert p3_temporal(1.0, model, ("a", "b")) == 1.0  # dt at the mode
    want = invgamma.pdf(2.0, 3.0, scale=4.0) / invgamma.pdf(1.0, 3.0, scale=4.0)
    assert abs(p3_temporal(2.0, model, ("a", "b")) - want) < 1e-12
    for dt in np.linspace(0.1, 300.0, 57):
        v = p3_temporal(float(dt), model, ("a", "b"))
        assert 0.0 <= v <= 1.0


# ---------------------------------------------------------------- transit detection


def test_gate_event_kind_validation():
    with pytest.raises(ValueError, match="unknown event kind"):
        GateEvent(t=0.0, kind="middle", gate="g1")


def test_detect_single_clean_transit():
    events = [
        GateEvent(t=0.0, kind="end", gate="g1", sub_id="a"),
        GateEvent(t=4.0, kind="start", gate="g2", sub_id="b"),
    ]
    assert detect_high_confidence(events, window=10.0) == [("g1", "g2", 4.0)]


def test_detect_two_in_transit_is_ambiguous():
    events = [
        GateEvent(t=0.0, kind="end", gate="g1"),
        GateEvent(t=1.0, kind="end", gate="g3"),
        GateEvent(t=4.0, kind="start", gate="g2"),
        GateEvent(t=5.0, kind="start", gate="g4"),
    ]
    assert detect_high_confidence(events, window=10.0) == []


def test_detect_start_without_pending_end():
    events = [GateEvent(t=4.0, kind="start", gate="g2")]
    assert detect_high_confidence(events, window=10.0) == []


def test_detect_window_expiry_and_boundary():
    late = [
        GateEvent(t=0.0, kind="end", gate="g1"),
        GateEvent(t=10.5, kind="start", gate="g2"),
    ]
    assert detect_high_confidence(late, window=10.0) == []
    boundary = [
        GateEvent(t=0.0, kind="end", gate="g1"),
        GateEvent(t=10.0, kind="start", gate="g2"),
    ]
    assert detect_high_confidence(boundary, window=10.0) == [("g1", "g2", 10.0)]


def test_detect_accepts_unsorted_events():
    events = [
        GateEvent(t=4.0, kind="start", gate="g2"),
        GateEvent(t=0.0, kind="end", gate="g1"),
    ]
    assert detect_high_confidence(events, window=10.0) == [("g1", "g2", 4.0)]


def test_detect_emitted_dts_stay_in_window():
    rng = np.random.default_rng(3)
    gates = _named(4)
    events = []
    t = 0.0
    for _ in range(200):
        t += float(rng.exponential(3.0))
        kind = "end" if rng.random() < 0.5 else "start"
        events.append(GateEvent(t=t, kind=kind, gate=gates[rng.integers(4)]))
    out = detect_high_confidence(events, window=8.0)
    for g1, g2, dt in out:
        assert 0.0 < dt <= 8.0
        assert g1 in gates and g2 in gates
