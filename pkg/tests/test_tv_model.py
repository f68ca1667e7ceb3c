import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from smpcft.ev_model import RoadGeometry
from smpcft.tv_model import (TvParams, TvReference, measure, truncated_normal, tv_feedback_input,
                             tv_predict, tv_reference, tv_step_true)

P = TvParams()
ROAD = RoadGeometry()
tv_states = st.tuples(st.floats(-300, 300), st.floats(0, 40), st.floats(-1, 8), st.floats(-3, 3))


def test_feedback_zero_on_reference():
    ref = TvReference(20.0, 3.5)
    assert np.allclose(tv_feedback_input([10, 20, 3.5, 0], ref, P), [0, 0])


def test_feedback_longitudinal_gain():
    u = tv_feedback_input([0, 22, 0, 0], TvReference(20.0, 0.0), P)
    assert u[0] == pytest.approx(-1.1)
    assert u[1] == 0.0


def test_feedback_clamps_to_input_box():
    # k12 * 22 = -12.1 demanded
    u = tv_feedback_input([0, 42, 0, 0], TvReference(20.0, 0.0), P)
    assert u[0] == -9.0


@given(tv_states, st.floats(0, 40), st.sampled_from([0.0, 3.5, 7.0]))
def test_feedback_always_admissible(xi, vref, yref):
    u = tv_feedback_input(np.array(xi), TvReference(vref, yref), P)
    assert np.all(u >= P.u_min) and np.all(u <= P.u_max)


@given(st.floats(-1e3, 1e3))
def test_feedback_ignores_position(x):
    ref = TvReference(20.0, 3.5)
    a = tv_feedback_input([x, 25, 2.0, 0.3], ref, P)
    b = tv_feedback_input([0, 25, 2.0, 0.3], ref, P)
    assert np.array_equal(a, b)


def test_reference_centered():
    assert tv_reference([0, 20, 7.0, 0], ROAD).y_ref == 7.0


def test_reference_switches_when_drifting_into_neighbour():
    assert tv_reference([0, 20, 2.0, 0.5], ROAD).y_ref == 3.5


def test_reference_stays_when_drifting_away():
    assert tv_reference([0, 20, 2.0, -0.5], ROAD).y_ref == 0.0


def test_reference_keeps_speed():
    r = tv_reference([0, 23.5, 0, 0], ROAD)
    assert r.vx_ref == 23.5 and r.vy_ref == 0.0


def test_predict_constant_velocity():
    pred = tv_predict([70, 20, 0, 0], 10, P, ROAD)
    assert np.allclose(pred[:, 0], 70 + 4 * np.arange(11))
    assert np.allclose(pred[:, 1:], [20, 0, 0])


def test_predict_converges_to_reference_speed():
    pred = tv_predict([0, 22, 0, 0], 10, P, ROAD, TvReference(20.0, 0.0))
    vx = pred[:, 1]
    assert np.all(np.diff(vx) < 0) and np.all(vx >= 20)


def test_predict_one_step_is_feedback_plus_dynamics():
    xi = np.array([0, 22, 1.0, 0.2])
    ref = TvReference(20.0, 0.0)
    u = tv_feedback_input(xi, ref, P)
    assert np.allclose(tv_predict(xi, 1, P, ROAD, ref)[1], P.A @ xi + P.B @ u)


def test_predict_rejects_empty_horizon():
    with pytest.raises(ValueError):
        tv_predict([0, 20, 0, 0], 0, P, ROAD)


def test_closed_loop_stable():
    rho = max(abs(np.linalg.eigvals(P.A + P.B @ P.K)))
    # the position state is a pure integrator, only the controlled modes must contract
    sub = (P.A + P.B @ P.K)[np.ix_([1, 2, 3], [1, 2, 3])]
    assert max(abs(np.linalg.eigvals(sub))) < 1.0
    assert rho == pytest.approx(1.0)


def test_measure_zero_covariance_is_identity():
    p = TvParams(sens_cov=np.zeros((4, 4)))
    xi = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(measure(xi, np.random.default_rng(0), p), xi)


def test_measure_respects_bounds():
    rng = np.random.default_rng(0)
    xi = np.array([40.0, 32.0, 7.0, 0.0])
    out = np.array([measure(xi, rng, P) for _ in range(5000)]) - xi
    assert np.all(np.abs(out) <= P.sens_bounds + 1e-15)


def _truncated_std(sigma, b):
    pdf = lambda x: np.exp(-0.5 * (x / sigma) ** 2)
    mass = quad(pdf, -b, b)[0]
    return np.sqrt(quad(lambda x: x * x * pdf(x), -b, b)[0] / mass)


def test_measure_std_matches_quadrature():
    rng = np.random.default_rng(1)
    std = np.sqrt(np.diag(P.sens_cov))
    draws = truncated_normal(rng, std, P.sens_bounds, size=100_000)
    for i in range(4):
        want = _truncated_std(std[i], P.sens_bounds[i])
        assert draws[:, i].std() == pytest.approx(want, rel=0.05)


def test_step_true_constant_velocity():
    out = tv_step_true([0, 20, 3.5, 0], [0, 0], None, P)
    assert np.allclose(out, [4, 20, 3.5, 0])


def test_step_true_floors_speed():
    assert tv_step_true([0, 0.5, 0, 0], [-9, 0], None, P)[1] == 0.0


def test_step_true_noise_mean():
    rng = np.random.default_rng(2)
    xi = np.array([0.0, 20.0, 3.5, 0.0])
    det = P.A @ xi
    outs = np.array([tv_step_true(xi, [0, 0], rng, P, True) for _ in range(100_000)])
    sd = np.sqrt(np.diag(P.B @ P.w_cov @ P.B.T))
    assert np.all(np.abs(outs.mean(axis=0) - det) <= 3 * sd / np.sqrt(len(outs)) + 1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        TvParams(sens_bounds=np.array([0.0, 0.25, 0.028, 0.028]))
