import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from drcbf import oracles
from drcbf.plants import (CircleReference, DubinsControl, DubinsState, Obstacle, QuadParams, QuadState,
                          TrackingGains, circle_barrier, dubins_dynamics, dubins_model, euler_step,
                          quad_dynamics, quad_model, quad_tracking_control, rk4_step, wrap_angle)

finite = st.floats(-10, 10, allow_nan=False)


def test_dubins_identity_rotation():
    d = dubins_dynamics(DubinsState(0, 0, 0), DubinsControl(1, 0, 0.5))
    np.testing.assert_allclose(d, [1, 0, 0.5], atol=1e-15)


def test_dubins_quarter_turn():
    d = dubins_dynamics(DubinsState(0, 0, math.pi / 2), DubinsControl(1, 0, 0))
    np.testing.assert_allclose(d, [0, 1, 0], atol=1e-15)


@given(st.floats(-10, 10), finite, finite)
def test_dubins_preserves_speed(theta, vx, vy):
    d = dubins_dynamics(DubinsState(0, 0, theta), DubinsControl(vx, vy, 0))
    assert np.hypot(d[0], d[1]) == pytest.approx(np.hypot(vx, vy), abs=1e-12)


@given(st.floats(-10, 10), finite, finite, finite)
def test_dubins_control_affine(theta, vx, vy, w):
    m = dubins_model()
    x, u = np.array([0.3, -0.2, theta]), np.array([vx, vy, w])
    np.testing.assert_allclose(m.derivative(x, u), dubins_dynamics(x, u), atol=1e-12)


def test_quad_hover():
    p = QuadParams()
    d = quad_dynamics(QuadState(0, 1, 0), [p.mass * p.gravity / 2] * 2, p)
    np.testing.assert_allclose(d[3:], 0.0, atol=1e-14)


def test_quad_free_fall():
    d = quad_dynamics(QuadState(0, 1, 0.3, 1.0, 0.0, 0.0), [0.0, 0.0])
    assert d[4] == -9.81 and d[5] == 0.0 and d[0] == 1.0


def test_quad_torque_channel():
    p = QuadParams()
    d = quad_dynamics(QuadState(0, 0, 0), [3.0, 1.0], p)
    assert d[5] == pytest.approx(2.0 * p.arm_length / p.inertia, rel=1e-15)


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(0, 15), st.floats(0, 15))
def test_quad_control_affine(x, tr, tl):
    m = quad_model()
    np.testing.assert_allclose(m.derivative(np.array(x), [tr, tl]), quad_dynamics(np.array(x), [tr, tl]),
                               atol=1e-12)


def test_quad_params_validation():
    with pytest.raises(ValueError):
        QuadParams(mass=0.0)
    with pytest.raises(ValueError):
        QuadParams(thrust_min=5.0, thrust_max=5.0)


def test_circle_barrier_values():
    ob = Obstacle((0.0, 0.0), 1.0)
    assert circle_barrier([1.0, 0.0], ob).value == pytest.approx(0.0, abs=1e-15)
    at_center = circle_barrier([0.0, 0.0], ob)
    assert at_center.value == 1.0
    np.testing.assert_array_equal(at_center.gradient, 0.0)
    ev = circle_barrier([2.0, 0.0], ob)
    assert ev.value == -3.0
    np.testing.assert_array_equal(ev.gradient, [-4.0, 0.0])


def test_circle_barrier_padding():
    ev = circle_barrier([2.0, 1.0], Obstacle((1.0, 1.0), 0.5), state_dim=6)
    assert ev.gradient.shape == (6,) and ev.hessian.shape == (6, 6)
    assert ev.hessian[0, 0] == ev.hessian[1, 1] == -2.0 and np.count_nonzero(ev.hessian) == 2


@given(finite, finite, finite, finite, st.floats(0.1, 3))
def test_circle_barrier_gradient_fd(x, y, cx, cy, r):
    ob = Obstacle((cx, cy), r)
    fd = oracles.central_difference(lambda p: circle_barrier(p, ob).value, np.array([x, y]), 1e-6)[0]
    np.testing.assert_allclose(circle_barrier([x, y], ob).gradient, fd, atol=1e-6 * max(1, abs(x) + abs(y) + 10))


def test_obstacle_validation_and_clearance():
    with pytest.raises(ValueError):
        Obstacle((0, 0), 0.0)
    assert Obstacle((0, 0), 1.0).clearance([3.0, 4.0]) == pytest.approx(4.0)


def test_euler_zero_and_constant():
    x = np.array([1.0, 2.0, 0.5])
    np.testing.assert_array_equal(euler_step(x, np.zeros(3), 0.1), x)
    d = np.array([0.3, -0.1, 0.2])
    y = x.copy()
    for _ in range(17):
        y = euler_step(y, d, 0.01)
    np.testing.assert_allclose(y, x + 17 * 0.01 * d, atol=1e-12)
    with pytest.raises(ValueError):
        euler_step(x, d, 0.0)


def _arc_error(dt, T=2.0, v=1.0, w=0.8):
    x = np.zeros(3)
    for _ in range(int(round(T / dt))):
        x = euler_step(x, dubins_dynamics(x, [v, 0.0, w]), dt, (2,))
    exact = np.array([v / w * math.sin(w * T), v / w * (1 - math.cos(w * T))])
    return np.linalg.norm(x[:2] - exact)


def test_euler_first_order_on_arc():
    e1, e2 = _arc_error(0.02), _arc_error(0.01)
    assert e1 / e2 == pytest.approx(2.0, rel=0.2)


def test_rk4_more_accurate_than_euler():
    x = np.zeros(3)
    for _ in range(100):
        x = rk4_step(lambda s: dubins_dynamics(s, [1.0, 0.0, 0.8]), x, 0.02, (2,))
    exact = np.array([math.sin(1.6) / 0.8, (1 - math.cos(1.6)) / 0.8])
    assert np.linalg.norm(x[:2] - exact) < 1e-8 < _arc_error(0.02)


@given(st.floats(-100, 100))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


def test_reference_derivatives():
    ref = CircleReference()
    pos, vel, acc = ref.at(1.3)
    assert np.linalg.norm(pos) == pytest.approx(3.0)
    fd_v = (ref.at(1.3 + 1e-6)[0] - ref.at(1.3 - 1e-6)[0]) / 2e-6
    fd_a = (ref.at(1.3 + 1e-6)[1] - ref.at(1.3 - 1e-6)[1]) / 2e-6
    np.testing.assert_allclose(vel, fd_v, atol=1e-6)
    np.testing.assert_allclose(acc, fd_a, atol=1e-6)


def test_tracker_hovers_on_static_reference():
    p = QuadParams()
    u = quad_tracking_control(np.array([1.0, 2.0, 0, 0, 0, 0]), np.array([1.0, 2.0]), np.zeros(2), np.zeros(2), p)
    np.testing.assert_allclose(u, [p.mass * p.gravity / 2] * 2, atol=1e-12)


def test_tracker_respects_tilt_limit():
    g = TrackingGains(max_tilt=0.3)
    # strong sideways demand at level attitude: the torque asks for at most max_tilt
    u = quad_tracking_control(np.zeros(6), np.array([100.0, 0.0]), np.zeros(2), np.zeros(2), gains=g)
    p = QuadParams()
    torque = (u[0] - u[1]) * p.arm_length
    assert torque == pytest.approx(p.inertia * g.k_theta * 0.3)
