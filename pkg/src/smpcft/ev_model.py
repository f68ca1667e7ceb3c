"""Kinematic bicycle model of the ego vehicle, its linearization and lane geometry."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RoadGeometry:
    n_lanes: int = 3
    w_lane: float = 3.5
    l_veh: float = 5.0
    w_veh: float = 2.0

    def __post_init__(self):
        if self.n_lanes < 1:
            raise ValueError("n_lanes must be >= 1")
        if self.w_lane <= self.w_veh:
            raise ValueError("lane must be wider than the vehicle")

    def center(self, lane: int) -> float:
        return lane * self.w_lane

    @property
    def d_min(self) -> float:
        # lowest admissible vehicle center
        return -0.5 * self.w_lane + 0.5 * self.w_veh

    @property
    def d_max(self) -> float:
        return (self.n_lanes - 0.5) * self.w_lane - 0.5 * self.w_veh


@dataclass(frozen=True)
class EvParams:
    l_r: float = 2.0
    l_f: float = 2.0
    u_min: np.ndarray = field(default_factory=lambda: np.array([-9.0, -0.2]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([5.0, 0.2]))
    du_min: np.ndarray = field(default_factory=lambda: np.array([-9.0, -0.4]))
    du_max: np.ndarray = field(default_factory=lambda: np.array([9.0, 0.4]))
    v_max: float = 35.0
    road: RoadGeometry = field(default_factory=RoadGeometry)

    def __post_init__(self):
        if self.l_r <= 0 or self.l_f <= 0:
            raise ValueError("axle distances must be positive")
        if np.any(np.asarray(self.u_min) >= np.asarray(self.u_max)):
            raise ValueError("u_min must be below u_max")


@dataclass
class LinearDiscreteModel:
    """x_{k+1} = A_d x_k + B_d u_k + affine, linearized around xi0 and u = 0."""
    A_d: np.ndarray
    B_d: np.ndarray
    affine: np.ndarray
    dt: float
    xi0: np.ndarray


def _slip(delta, p: EvParams):
    return np.arctan(p.l_r * np.tan(delta) / (p.l_r + p.l_f))


def ev_derivative(xi, u, p: EvParams) -> np.ndarray:
    s, d, phi, v = xi
    a, delta = u
    alpha = _slip(delta, p)
    return np.array([
        v * np.cos(phi + alpha),
        v * np.sin(phi + alpha),
        v / p.l_r * np.sin(alpha),
        a,
    ])


def discrete_matrices(xi0, delta, dt, p: EvParams):
    """Closed-form Jacobians of the one-step Euler map at (xi0, [a, delta])."""
    _, _, phi, v = xi0
    T = dt
    L = p.l_r + p.l_f
    td = np.tan(delta)
    z1 = phi + np.arctan(p.l_r * td / L)
    z2 = T**2 * v * td
    z3 = (p.l_r * td) ** 2
    z4 = L * np.sqrt(z3 / L**2 + 1.0)
    z5 = v * (td**2 + 1.0)
    z6 = L**3 * (z3 / L**2 + 1.0) ** 1.5
    z7 = z5 / z4 - z3 * z5 / z6
    z8 = T * p.l_r * z5
    z9 = L * (z3 / L**2 + 1.0)
    s1, c1 = np.sin(z1), np.cos(z1)
    A = np.array([
        [1.0, 0.0, -T * v * s1, T * c1 - z2 * s1 / (2 * z4)],
        [0.0, 1.0, T * v * c1, T * s1 + z2 * c1 / (2 * z4)],
        [0.0, 0.0, 1.0, T * td / z4],
        [0.0, 0.0, 0.0, 1.0],
    ])
    B = np.array([
        [T**2 * c1 / 2, -T**2 * v * z7 * s1 / 2 - z8 * s1 / z9],
        [T**2 * s1 / 2, T**2 * v * z7 * c1 / 2 + z8 * c1 / z9],
        [T**2 * td / (2 * z4), T * z7],
        [T, 0.0],
    ])
    return A, B


def linearize_discretize(xi0, dt: float, p: EvParams) -> LinearDiscreteModel:
    if dt <= 0:
        raise ValueError("dt must be positive")
    xi0 = np.asarray(xi0, dtype=float)
    A, B = discrete_matrices(xi0, 0.0, dt, p)
    f0 = ev_derivative(xi0, (0.0, 0.0), p)
    affine = xi0 + dt * f0 - A @ xi0
    return LinearDiscreteModel(A, B, affine, dt, xi0.copy())


def linearize_along(states, inputs, dt: float, p: EvParams) -> list[LinearDiscreteModel]:
    """Per-step models about a trajectory, exact at each (state, input) pair on the plant."""
    out = []
    for xi, u in zip(states, inputs):
        xi = np.asarray(xi, float)
        u = np.asarray(u, float)
        A, B = discrete_matrices(xi, u[1], dt, p)
        affine = step_plant(xi, u, dt, p) - A @ xi - B @ u
        out.append(LinearDiscreteModel(A, B, affine, dt, xi.copy()))
    return out


def predict_linear(model: LinearDiscreteModel, xi_k, u_k) -> np.ndarray:
    return model.A_d @ np.asarray(xi_k, float) + model.B_d @ np.asarray(u_k, float) + model.affine


def step_plant(xi, u, dt: float, p: EvParams) -> np.ndarray:
    """One RK4 step of the nonlinear model; speed clamped to [0, v_max]."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    xi = np.asarray(xi, float)
    k1 = ev_derivative(xi, u, p)
    k2 = ev_derivative(xi + 0.5 * dt * k1, u, p)
    k3 = ev_derivative(xi + 0.5 * dt * k2, u, p)
    k4 = ev_derivative(xi + dt * k3, u, p)
    out = xi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    out[3] = min(max(out[3], 0.0), p.v_max)
    return out


def lane_of(d: float, road: RoadGeometry) -> int:
    # ties (exactly on a boundary) go to the lower lane
    x = d / road.w_lane
    idx = int(np.ceil(x - 0.5))
    return int(min(max(idx, 0), road.n_lanes - 1))
