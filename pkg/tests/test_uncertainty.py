import numpy as np
import pytest
from hypothesis import given, strategies as st

from smpcft.ev_model import RoadGeometry
from smpcft.tv_model import TvParams
from smpcft.uncertainty import (SafetyRectangle, ellipse_axes, error_cov_sequence, propagate_error_cov,
                                reduce_cov, safety_rectangle, tolerance_level, velocity_margin)

P = TvParams()
ROAD = RoadGeometry()


def test_disturbance_only_step():
    p = TvParams(k12=0.0, k21=0.0, k22=0.0)
    s1 = propagate_error_cov(np.zeros((4, 4)), p)
    assert np.allclose(s1[:2, :2], [[1.76e-4, 1.76e-3], [1.76e-3, 1.76e-2]], atol=1e-12)


def test_lyapunov_without_disturbance():
    p = TvParams(k12=0.0, k21=0.0, k22=0.0, w_cov=np.zeros((2, 2)))
    rng = np.random.default_rng(0)
    M = rng.normal(size=(4, 4))
    S = M @ M.T
    assert np.allclose(propagate_error_cov(S, p), p.A @ S @ p.A.T)


@given(st.lists(st.floats(-2, 2), min_size=16, max_size=16))
def test_propagation_preserves_psd(vals):
    M = np.array(vals).reshape(4, 4)
    S = M @ M.T
    for _ in range(10):
        S = propagate_error_cov(S, P)
        assert np.allclose(S, S.T)
        assert np.linalg.eigvalsh(S).min() >= -1e-10


def test_propagation_matches_monte_carlo():
    rng = np.random.default_rng(3)
    n = 100_000
    Acl = P.A + P.B @ P.K
    e = rng.multivariate_normal(np.zeros(4), P.sens_cov, size=n)
    for _ in range(10):
        w = rng.multivariate_normal(np.zeros(2), P.w_cov, size=n)
        e = e @ Acl.T + w @ P.B.T
    emp = np.cov(e.T)
    ref = error_cov_sequence(10, P)[10]
    assert np.linalg.norm(emp - ref) / np.linalg.norm(ref) < 0.05


def test_reduce_diagonal():
    assert np.array_equal(reduce_cov(np.diag([1.0, 2, 3, 4])), np.diag([1.0, 3]))


def test_reduce_drops_correlations():
    S = np.array([[2.0, 0.5, 0.1, 0], [0.5, 1, 0, 0], [0.1, 0, 3, 0.2], [0, 0, 0.2, 1]])
    R = reduce_cov(S)
    assert R[0, 1] == 0 and R[1, 0] == 0 and R[0, 0] == 2 and R[1, 1] == 3


def test_marginal_variance_monte_carlo():
    rng = np.random.default_rng(4)
    S = error_cov_sequence(10, P)[10]
    x = rng.multivariate_normal(np.zeros(4), S, size=100_000)[:, 0]
    assert x.var() == pytest.approx(reduce_cov(S)[0, 0], rel=0.03)


def test_tolerance_values():
    assert tolerance_level(0.8) == pytest.approx(-2 * np.log(0.2))
    assert tolerance_level(0.8) == pytest.approx(3.21888, abs=1e-5)
    assert tolerance_level(0.95) == pytest.approx(5.99146, abs=1e-5)
    assert tolerance_level(1e-12) < 1e-10


@pytest.mark.parametrize("beta", [0.0, 1.0, -0.1, 1.5])
def test_tolerance_domain(beta):
    with pytest.raises(ValueError):
        tolerance_level(beta)


@pytest.mark.parametrize("beta", [0.8, 0.9, 0.95])
def test_ellipse_containment_calibration(beta):
    rng = np.random.default_rng(5)
    S = reduce_cov(error_cov_sequence(10, P)[7])
    pts = rng.multivariate_normal(np.zeros(2), S, size=100_000)
    kappa = tolerance_level(beta)
    inside = (pts[:, 0] ** 2 / S[0, 0] + pts[:, 1] ** 2 / S[1, 1]) <= kappa
    assert inside.mean() == pytest.approx(beta, abs=0.01)


def test_rectangle_velocity_margin():
    r = safety_rectangle([0, 0, 0, 27], [0, 20, 0, 0], np.zeros((4, 4)), 3.0, ROAD, -9.0)
    assert velocity_margin(27, 20, -9) == pytest.approx(329 / 9)
    assert r.a_r == pytest.approx(5 + 0.01 + 329 / 9)
    assert r.a_r == pytest.approx(41.566, abs=1e-3)
    assert r.b_r == pytest.approx(2.01)


def test_rectangle_no_margin_for_faster_tv():
    assert velocity_margin(20, 27, -9) == 0.0


def test_rectangle_lateral_uncertainty():
    S = np.diag([0.0, 0, 0.01, 0])
    r = safety_rectangle([0, 0, 0, 27], [0, 27, 0, 0], S, 3.21888, ROAD, -9.0)
    assert ellipse_axes(S, 3.21888)[1] == pytest.approx(0.17941, abs=1e-5)
    assert r.b_r == pytest.approx(2.18941, abs=1e-5)


def test_rectangle_corner_half_extents():
    r = SafetyRectangle(100.0, 3.5, 41.566, 2.01)
    assert (r.x_hi, r.y_hi) == pytest.approx((120.783, 4.505))


def test_exclusion_region_is_center_to_center():
    r = SafetyRectangle(100.0, 3.5, 41.566, 2.01).exclusion_region()
    assert (r.x_lo, r.x_hi, r.y_lo, r.y_hi) == pytest.approx((58.434, 141.566, 1.49, 5.51))


def test_velocity_margin_needs_negative_deceleration():
    with pytest.raises(ValueError):
        velocity_margin(27, 20, 1.0)


sig = st.tuples(st.floats(0, 4), st.floats(0, 1))


@given(sig, sig, st.floats(0.01, 15), st.floats(0.01, 15), st.floats(0, 35), st.floats(0, 35))
def test_rectangle_monotone(s1, s2, k1, k2, v0, vtv):
    lo = np.diag([min(s1[0], s2[0]), 0, min(s1[1], s2[1]), 0])
    hi = np.diag([max(s1[0], s2[0]), 0, max(s1[1], s2[1]), 0])
    ka, kb = sorted((k1, k2))
    a = safety_rectangle([0, 0, 0, v0], [0, vtv, 0, 0], lo, ka, ROAD, -9.0)
    b = safety_rectangle([0, 0, 0, v0], [0, vtv, 0, 0], hi, kb, ROAD, -9.0)
    assert b.a_r >= a.a_r and b.b_r >= a.b_r
    assert a.a_r >= ROAD.l_veh + 0.01 and a.b_r >= ROAD.w_veh + 0.01


@given(sig, st.floats(0.01, 15), st.floats(0, 2 * np.pi), st.floats(0, 1))
def test_exclusion_covers_ellipse_and_bodies(s, kappa, theta, rad):
    # a TV body centred anywhere in the kappa-ellipse never touches an EV whose
    # center is outside the exclusion region
    S = np.diag([s[0], 0, s[1], 0])
    ex, ey = ellipse_axes(S, kappa)
    r = safety_rectangle([0, 0, 0, 27], [50, 20, 3.5, 0], S, kappa, ROAD, -9.0).exclusion_region()
    px, py = 50 + rad * ex * np.cos(theta), 3.5 + rad * ey * np.sin(theta)
    assert r.x_lo <= px - ROAD.l_veh and px + ROAD.l_veh <= r.x_hi
    assert r.y_lo <= py - ROAD.w_veh and py + ROAD.w_veh <= r.y_hi
