"""Exact filtering: survival weights, the no-arrival flow, jump updates."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poistop import (
    ArrivalEvent,
    filter_path,
    flow,
    jump_update,
    make_model,
    survival_weights,
)
from poistop.filter import (
    FilterError,
    FlowPropagator,
    events_from_csv,
    events_to_csv,
    flow_derivative,
)
from poistop.model import discrete_marks


def absorbing_two_state(lam=(1.0, 2.0), **kw):
    args = dict(n=2, Q=[[0.0, 0.0], [0.0, 0.0]], lam=list(lam),
                mu=[[1.0, 0.0]], horizon=1.0)
    args.update(kw)
    return make_model(**args)


def ergodic_three_state():
    return make_model(
        n=3,
        Q=[[-2.0, 1.0, 1.0], [0.5, -1.0, 0.5], [1.0, 2.0, -3.0]],
        lam=[1.0, 2.0, 4.0],
        mu=[[1.0, 0.0, 0.0]],
        horizon=1.0,
    )


# -- survival weights -------------------------------------------------------

def test_survival_weights_single_state():
    m = make_model(n=1, Q=[[0.0]], lam=[2.0], mu=[[1.0]], horizon=1.0)
    assert survival_weights(m, 0.5, [1.0])[0] == pytest.approx(
        np.exp(-1.0), abs=1e-14)


def test_survival_weights_zero_time_identity():
    m = ergodic_three_state()
    pi = np.array([0.2, 0.3, 0.5])
    assert np.allclose(survival_weights(m, 0.0, pi), pi, atol=1e-15)


def test_survival_weights_absorbing_closed_form():
    # Q = 0: m_i(t) = pi_i e^{-lam_i t}; at t = ln 2 with lam = (1, 2):
    # (0.5/2, 0.5/4) = (0.25, 0.125)
    m = absorbing_two_state()
    out = survival_weights(m, np.log(2.0), [0.5, 0.5])
    assert np.allclose(out, [0.25, 0.125], atol=1e-12)


def test_survival_weights_negative_time_rejected():
    with pytest.raises(FilterError):
        survival_weights(absorbing_two_state(), -0.1, [0.5, 0.5])


# -- flow -------------------------------------------------------------------

def test_flow_zero_time_identity():
    m = ergodic_three_state()
    pi = np.array([0.2, 0.3, 0.5])
    assert np.allclose(flow(m, 0.0, pi), pi)


def test_flow_absorbing_closed_form():
    m = absorbing_two_state()
    out = flow(m, np.log(2.0), [0.5, 0.5])
    assert np.allclose(out, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)


def test_flow_constant_for_uniform_rates():
    m = absorbing_two_state(lam=(3.0, 3.0))
    pi = np.array([0.3, 0.7])
    for t in (0.1, 1.0, 5.0):
        assert np.allclose(flow(m, t, pi), pi, atol=1e-12)


def test_flow_long_horizon_stays_normalized():
    m = ergodic_three_state()
    out = flow(m, 500.0, [1.0, 0.0, 0.0])
    assert np.isfinite(out).all()
    assert out.sum() == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1),
       st.floats(0.0, 1.2), st.floats(0.0, 1.2))
def test_flow_semigroup(seed, t, u):
    # x(t + u, pi) = x(u, x(t, pi)); durations kept within 5 / lam_bar
    m = ergodic_three_state()
    rng = np.random.default_rng(seed)
    pi = rng.exponential(size=3)
    pi /= pi.sum()
    lhs = flow(m, t + u, pi)
    rhs = flow(m, u, flow(m, t, pi))
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_flow_derivative_matches_finite_difference():
    m = ergodic_three_state()
    rng = np.random.default_rng(9)
    h = 1e-5
    for _ in range(20):
        pi = rng.exponential(size=3)
        pi /= pi.sum()
        fd = (flow(m, h, pi) - flow(m, 0.0, pi)) / h
        assert np.max(np.abs(fd - flow_derivative(m, pi))) < 1e-4


# -- jump update ------------------------------------------------------------

def test_jump_identity_when_likelihoods_equal():
    m = absorbing_two_state(lam=(2.0, 2.0))
    pi = np.array([0.3, 0.7])
    assert np.allclose(jump_update(m, pi), pi, atol=1e-14)


def test_jump_simple_poisson_hand_value():
    # pi_i -> lam_i pi_i / sum: (1*.5, 5*.5) / 3 = (1/6, 5/6)
    m = absorbing_two_state(lam=(1.0, 5.0))
    assert np.allclose(jump_update(m, [0.5, 0.5]), [1.0 / 6, 5.0 / 6],
                       atol=1e-14)


def test_jump_corner_fixed_point():
    m = absorbing_two_state()
    assert np.allclose(jump_update(m, [1.0, 0.0]), [1.0, 0.0])


def test_jump_impossible_mark_rejected():
    m = make_model(
        n=2, Q=[[0.0, 0.0], [0.0, 0.0]], lam=[1.0, 2.0],
        marks=discrete_marks([1.0, 2.0], [[1.0, 0.0], [1.0, 0.0]]),
        mu=[[1.0, 0.0]], horizon=1.0,
    )
    with pytest.raises(FilterError):
        jump_update(m, [0.5, 0.5], 2.0)


# -- filter along a path ----------------------------------------------------

def test_filter_no_events_is_pure_flow():
    m = ergodic_three_state()
    pi0 = np.array([0.5, 0.25, 0.25])
    traj = filter_path(m, pi0, [], 0.7)
    assert len(traj.segments) == 1
    assert np.allclose(traj.evaluate(0.7), flow(m, 0.7, pi0))


def test_filter_one_event_composition():
    m = ergodic_three_state()
    pi0 = np.array([0.5, 0.25, 0.25])
    traj = filter_path(m, pi0, [ArrivalEvent(0.3, 0.0)], 1.0)
    expected = jump_update(m, flow(m, 0.3, pi0))
    assert np.allclose(traj.evaluate(0.3), expected, atol=1e-12)


def test_filter_jump_records_consistent():
    m = ergodic_three_state()
    events = [ArrivalEvent(0.2, 0.0), ArrivalEvent(0.5, 0.0),
              ArrivalEvent(0.9, 0.0)]
    traj = filter_path(m, [1 / 3, 1 / 3, 1 / 3], events, 1.0)
    for _, pre, post in traj.jumps:
        assert np.max(np.abs(post - jump_update(m, pre))) < 1e-10


def test_filter_absorbing_one_shot_likelihood():
    # Q = 0: the posterior factorizes, so ten updates must agree with a
    # single likelihood evaluation
    #   post_i  propto  pi_i (lam_i)^k (prod_j f_i(y_j)) e^{-lam_i t}
    m = make_model(
        n=2, Q=[[0.0, 0.0], [0.0, 0.0]], lam=[1.0, 3.0],
        marks=discrete_marks([1.0, 2.0], [[0.3, 0.7], [0.6, 0.4]]),
        mu=[[1.0, 0.0]], horizon=5.0,
    )
    times = np.linspace(0.3, 4.2, 10)
    marks = [1.0, 2.0] * 5
    events = [ArrivalEvent(float(t), y) for t, y in zip(times, marks)]
    traj = filter_path(m, [0.5, 0.5], events, 5.0)
    t_eval = 4.5
    f = np.array([[0.3, 0.7], [0.6, 0.4]])
    w = 0.5 * np.ones(2)
    for y in marks:
        w = w * m.lam * f[:, int(y) - 1]
    w = w * np.exp(-m.lam * t_eval)
    w /= w.sum()
    assert np.max(np.abs(traj.evaluate(t_eval) - w)) < 1e-8


def test_filter_rejects_unsorted_events():
    m = ergodic_three_state()
    with pytest.raises(FilterError):
        filter_path(m, [1 / 3, 1 / 3, 1 / 3],
                    [ArrivalEvent(0.5, 0.0), ArrivalEvent(0.2, 0.0)], 1.0)


# -- batch propagation and CSV ----------------------------------------------

def test_flow_propagator_matches_flow():
    m = ergodic_three_state()
    prop = FlowPropagator(m)
    rng = np.random.default_rng(17)
    beliefs = rng.exponential(size=(40, 3))
    beliefs /= beliefs.sum(axis=1, keepdims=True)
    durations = rng.uniform(0.0, 2.0, size=40)
    out = prop.advance(beliefs, durations)
    for k in range(40):
        assert np.max(np.abs(out[k] - flow(m, durations[k], beliefs[k]))) \
            < 1e-9


def test_events_csv_round_trip(tmp_path):
    events = [ArrivalEvent(0.25, 1.0), ArrivalEvent(0.875, 2.0)]
    path = tmp_path / "events.csv"
    events_to_csv(events, path)
    back = events_from_csv(path)
    assert back == events
