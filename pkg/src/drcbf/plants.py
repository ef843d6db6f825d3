"""Dynamics, obstacles and integrators for the two case-study vehicles.

* Dubins car, first order: state ``(x, y, θ)``, body-frame control
  ``(v_x, v_y, ω)`` rotated into the world frame.
* Planar quadcopter, second order: state ``(x, y, θ, ẋ, ẏ, θ̇)``, control
  ``(T_r, T_l)`` rotor thrusts; θ is measured from the vertical so that the
  thrust direction is ``(sin θ, cos θ)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .barrier import BarrierEval, ControlAffineModel


def wrap_angle(a):
    """Wrap to (-π, π]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class DubinsState:
    x: float
    y: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> "DubinsState":
        return cls(float(a[0]), float(a[1]), wrap_angle(a[2]))


@dataclass(frozen=True)
class DubinsControl:
    v_x: float
    v_y: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_x, self.v_y, self.omega])


@dataclass(frozen=True)
class QuadState:
    x: float
    y: float
    theta: float
    x_dot: float = 0.0
    y_dot: float = 0.0
    theta_dot: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.x_dot, self.y_dot, self.theta_dot])

    @classmethod
    def from_array(cls, a) -> "QuadState":
        return cls(float(a[0]), float(a[1]), wrap_angle(a[2]), float(a[3]), float(a[4]), float(a[5]))


@dataclass(frozen=True)
class QuadParams:
    mass: float = 1.0
    gravity: float = 9.81
    arm_length: float = 0.25
    inertia: float = 0.01
    thrust_min: float = 0.0
    thrust_max: float = 20.0

    def __post_init__(self):
        for name in ("mass", "gravity", "arm_length", "inertia"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.thrust_min < self.thrust_max:
            raise ValueError("need 0 <= thrust_min < thrust_max")


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def clearance(self, position) -> float:
        return float(np.hypot(position[0] - self.center[0], position[1] - self.center[1]) - self.radius)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def dubins_dynamics(state, control) -> np.ndarray:
    x = state.as_array() if isinstance(state, DubinsState) else np.asarray(state, dtype=float)
    u = control.as_array() if isinstance(control, DubinsControl) else np.asarray(control, dtype=float)
    return rotation(x[2]) @ u


def dubins_model(lower=(-1.0, -1.0, -1.0), upper=(1.0, 1.0, 1.0)) -> ControlAffineModel:
    return ControlAffineModel(
        state_dim=3,
        control_dim=3,
        drift=lambda x: np.zeros(3),
        actuation=lambda x: rotation(x[2]),
        lower=np.asarray(lower, dtype=float),
        upper=np.asarray(upper, dtype=float),
        drift_jacobian=lambda x: np.zeros((3, 3)),
    )


def _quad_drift(x, params: QuadParams) -> np.ndarray:
    return np.array([x[3], x[4], x[5], 0.0, -params.gravity, 0.0])


def _quad_actuation(x, params: QuadParams) -> np.ndarray:
    s, c = math.sin(x[2]), math.cos(x[2])
    m, k = params.mass, params.arm_length / params.inertia
    g = np.zeros((6, 2))
    g[3] = [s / m, s / m]
    g[4] = [c / m, c / m]
    g[5] = [k, -k]
    return g


def _quad_drift_jacobian(x, params: QuadParams) -> np.ndarray:
    J = np.zeros((6, 6))
    J[0, 3] = J[1, 4] = J[2, 5] = 1.0
    return J


def quad_dynamics(state, control, params: QuadParams = QuadParams()) -> np.ndarray:
    x = state.as_array() if isinstance(state, QuadState) else np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    total = u[0] + u[1]
    s, c = math.sin(x[2]), math.cos(x[2])
    return np.array([
        x[3],
        x[4],
        x[5],
        total / params.mass * s,
        total / params.mass * c - params.gravity,
        (u[0] - u[1]) * params.arm_length / params.inertia,
    ])


def quad_model(params: QuadParams = QuadParams()) -> ControlAffineModel:
    return ControlAffineModel(
        state_dim=6,
        control_dim=2,
        drift=lambda x: _quad_drift(x, params),
        actuation=lambda x: _quad_actuation(x, params),
        lower=np.full(2, params.thrust_min),
        upper=np.full(2, params.thrust_max),
        drift_jacobian=lambda x: _quad_drift_jacobian(x, params),
    )


def circle_barrier(position, obstacle: Obstacle, state_dim: int = 2,
                   position_index: tuple[int, int] = (0, 1)) -> BarrierEval:
    """``h = ρ² - ‖r - r_obs‖²`` (unsafe when positive), padded to the full state."""
    r = np.asarray(position, dtype=float)[:2]
    d = r - np.asarray(obstacle.center)
    grad = np.zeros(state_dim)
    hess = np.zeros((state_dim, state_dim))
    i, j = position_index
    grad[i], grad[j] = -2.0 * d
    hess[i, i] = hess[j, j] = -2.0
    return BarrierEval(value=float(obstacle.radius ** 2 - d @ d), gradient=grad, hessian=hess)


def euler_step(state, derivative, dt: float, angle_index: tuple[int, ...] = ()) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = np.asarray(state, dtype=float) + dt * np.asarray(derivative, dtype=float)
    for i in angle_index:
        out[i] = wrap_angle(out[i])
    return out


def rk4_step(fn, state, dt: float, angle_index: tuple[int, ...] = ()) -> np.ndarray:
    """Classical RK4 with the control held constant; ``fn(x)`` returns ẋ."""
    x = np.asarray(state, dtype=float)
    k1 = fn(x)
    k2 = fn(x + 0.5 * dt * k1)
    k3 = fn(x + 0.5 * dt * k2)
    k4 = fn(x + dt * k3)
    return euler_step(x, (k1 + 2 * k2 + 2 * k3 + k4) / 6.0, dt, angle_index)


@dataclass(frozen=True)
class CircleReference:
    """Constant-speed circular path ``c + R(cos φ, sin φ)``, ``φ = φ₀ + 2πt/T``."""

    radius: float = 3.0
    center: tuple[float, float] = (0.0, 0.0)
    period: float = 20.0
    phase: float = 0.0

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        w = 2 * math.pi / self.period
        phi = self.phase + w * t
        c, s = math.cos(phi), math.sin(phi)
        pos = np.array([self.center[0] + self.radius * c, self.center[1] + self.radius * s])
        vel = self.radius * w * np.array([-s, c])
        acc = -self.radius * w * w * np.array([c, s])
        return pos, vel, acc


@dataclass(frozen=True)
class TrackingGains:
    kp: float = 9.0
    kd: float = 6.0
    k_theta: float = 400.0
    k_omega: float = 40.0
    max_tilt: float = 0.6


def quad_tracking_control(x, ref_pos, ref_vel, ref_acc, params: QuadParams = QuadParams(),
                          gains: TrackingGains = TrackingGains()) -> np.ndarray:
    """PD position loop on a thrust vector, fast attitude loop on the rotor split."""
    x = np.asarray(x, dtype=float)
    a_des = ref_acc + gains.kp * (ref_pos - x[:2]) + gains.kd * (ref_vel - x[3:5])
    force = params.mass * (a_des + np.array([0.0, params.gravity]))
    thrust = float(force @ np.array([math.sin(x[2]), math.cos(x[2])]))
    # keep the commanded attitude within max_tilt of vertical
    theta_des = max(-gains.max_tilt, min(gains.max_tilt, math.atan2(force[0], force[1])))
    torque = params.inertia * (gains.k_theta * wrap_angle(theta_des - x[2]) - gains.k_omega * x[5])
    diff = torque / params.arm_length
    return np.array([(thrust + diff) / 2.0, (thrust - diff) / 2.0])
