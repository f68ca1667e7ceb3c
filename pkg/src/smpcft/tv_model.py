"""Point-mass target vehicle model with saturated feedback and noisy sensing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ev_model import RoadGeometry, lane_of


def tv_matrices(dt: float):
    A = np.array([
        [1.0, dt, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, dt],
        [0.0, 0.0, 0.0, 1.0],
    ])
    B = np.array([
        [0.5 * dt**2, 0.0],
        [dt, 0.0],
        [0.0, 0.5 * dt**2],
        [0.0, dt],
    ])
    return A, B


@dataclass
class TvParams:
    dt: float = 0.2
    k12: float = -0.55
    k21: float = -0.63
    k22: float = -1.15
    u_min: np.ndarray = field(default_factory=lambda: np.array([-9.0, -0.4]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([5.0, 0.4]))
    w_cov: np.ndarray = field(default_factory=lambda: np.diag([0.44, 0.09]))
    sens_cov: np.ndarray = field(default_factory=lambda: np.diag([0.25, 0.25, 0.028, 0.028]))
    sens_bounds: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.25, 0.028, 0.028]))

    def __post_init__(self):
        self.A, self.B = tv_matrices(self.dt)
        self.K = np.array([
            [0.0, self.k12, 0.0, 0.0],
            [0.0, 0.0, self.k21, self.k22],
        ])
        if np.any(np.asarray(self.sens_bounds) <= 0):
            raise ValueError("sensor bounds must be positive")


@dataclass(frozen=True)
class TvReference:
    vx_ref: float
    y_ref: float
    vy_ref: float = 0.0

    def as_state(self, x: float = 0.0) -> np.ndarray:
        return np.array([x, self.vx_ref, self.y_ref, self.vy_ref])


def tv_feedback_input(xi, ref: TvReference, p: TvParams) -> np.ndarray:
    xi = np.asarray(xi, float)
    err = xi - ref.as_state(xi[0])
    u = p.K @ err
    return np.clip(u, p.u_min, p.u_max)


def tv_reference(xi_hat, road: RoadGeometry) -> TvReference:
    """Keep the current lane unless the body overlaps a neighbour lane while drifting into it."""
    x, vx, y, vy = xi_hat
    lane = lane_of(y, road)
    target = lane
    upper = road.center(lane) + 0.5 * road.w_lane
    lower = road.center(lane) - 0.5 * road.w_lane
    if vy > 0 and y + 0.5 * road.w_veh > upper and lane + 1 < road.n_lanes:
        target = lane + 1
    elif vy < 0 and y - 0.5 * road.w_veh < lower and lane > 0:
        target = lane - 1
    return TvReference(vx_ref=float(vx), y_ref=road.center(target), vy_ref=0.0)


def tv_predict(xi_hat0, N: int, p: TvParams, road: RoadGeometry, ref: TvReference | None = None) -> np.ndarray:
    """Deterministic closed-loop prediction, shape (N+1, 4)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    xi = np.asarray(xi_hat0, float)
    if ref is None:
        ref = tv_reference(xi, road)
    out = np.empty((N + 1, 4))
    out[0] = xi
    for k in range(N):
        u = tv_feedback_input(out[k], ref, p)
        out[k + 1] = p.A @ out[k] + p.B @ u
    return out


def truncated_normal(rng: np.random.Generator, std, bound, size: int | None = None) -> np.ndarray:
    """Componentwise rejection sampling of a zero-mean truncated Gaussian.

    Returns shape std.shape, or (size,) + std.shape when size is given.
    """
    std = np.asarray(std, float)
    bound = np.asarray(bound, float)
    n = 1 if size is None else int(size)
    out = np.zeros((n,) + std.shape)
    for i in range(std.size):
        if std[i] == 0:
            continue
        filled = 0
        while filled < n:
            draw = rng.normal(0.0, std[i], size=max(2 * (n - filled), 8))
            draw = draw[np.abs(draw) <= bound[i]][: n - filled]
            out[filled:filled + draw.size, i] = draw
            filled += draw.size
    return out[0] if size is None else out


def measure(xi_true, rng: np.random.Generator, p: TvParams) -> np.ndarray:
    std = np.sqrt(np.diag(p.sens_cov))
    return np.asarray(xi_true, float) + truncated_normal(rng, std, p.sens_bounds)


def tv_step_true(xi, script_input, rng, p: TvParams, noise_on: bool = False) -> np.ndarray:
    u = np.asarray(script_input, float).copy()
    if noise_on:
        u = u + rng.multivariate_normal(np.zeros(2), p.w_cov)
    out = p.A @ np.asarray(xi, float) + p.B @ u
    out[1] = max(out[1], 0.0)
    return out
