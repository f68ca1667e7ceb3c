"""Prediction-error covariance and the uncertainty-enlarged TV safety rectangle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ev_model import RoadGeometry
from .tv_model import TvParams

M_SAFE = 0.01


@dataclass(frozen=True)
class SafetyRectangle:
    """Axis-aligned rectangle of length a_r and width b_r around a predicted TV position."""
    x: float
    y: float
    a_r: float
    b_r: float
    k: int = 0

    def enlarged(self, length: float, width: float) -> "SafetyRectangle":
        """Minkowski sum with a centered length x width box."""
        return SafetyRectangle(self.x, self.y, self.a_r + length, self.b_r + width, self.k)

    def exclusion_region(self) -> "SafetyRectangle":
        """Region the EV center must avoid.

        a_r and b_r are center-to-center distances (both half-lengths, the
        full braking gap and the uncertainty), so the EV center keeps them
        on every side: center +- (a_r, b_r).
        """
        return self.enlarged(self.a_r, self.b_r)

    @property
    def x_lo(self):
        return self.x - 0.5 * self.a_r

    @property
    def x_hi(self):
        return self.x + 0.5 * self.a_r

    @property
    def y_lo(self):
        return self.y - 0.5 * self.b_r

    @property
    def y_hi(self):
        return self.y + 0.5 * self.b_r


def propagate_error_cov(sigma_k, p: TvParams) -> np.ndarray:
    Acl = p.A + p.B @ p.K
    out = p.B @ p.w_cov @ p.B.T + Acl @ np.asarray(sigma_k, float) @ Acl.T
    return 0.5 * (out + out.T)


def error_cov_sequence(N: int, p: TvParams) -> list[np.ndarray]:
    """Sigma_0 .. Sigma_N starting from the sensor covariance."""
    sig = [np.array(p.sens_cov, float)]
    for _ in range(N):
        sig.append(propagate_error_cov(sig[-1], p))
    return sig


def reduce_cov(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, float)
    return np.diag([sigma[0, 0], sigma[2, 2]])


def tolerance_level(beta: float) -> float:
    # 2-dof chi-squared quantile: P(e' S^-1 e <= kappa) = beta
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    return -2.0 * np.log1p(-beta)


def ellipse_axes(sigma, kappa: float):
    red = reduce_cov(sigma)
    sx = np.sqrt(max(red[0, 0], 0.0))
    sy = np.sqrt(max(red[1, 1], 0.0))
    return sx * np.sqrt(kappa), sy * np.sqrt(kappa)


def velocity_margin(v0: float, vx_tv: float, a_min: float) -> float:
    """Extra braking distance of the EV relative to the TV when both brake fully."""
    if a_min >= 0:
        raise ValueError("a_min must be negative")
    return -max(0.0, v0**2 - vx_tv**2) / a_min


def safety_rectangle(xi0_ev, tv_k, sigma_k, kappa: float, road: RoadGeometry,
                     a_min: float, k: int = 0, m_safe: float = M_SAFE) -> SafetyRectangle:
    ex, ey = ellipse_axes(sigma_k, kappa)
    a_r = road.l_veh + m_safe + velocity_margin(xi0_ev[3], tv_k[1], a_min) + ex
    b_r = road.w_veh + m_safe + ey
    return SafetyRectangle(float(tv_k[0]), float(tv_k[2]), float(a_r), float(b_r), k)
