"""Condensed QPs for the SMPC and fail-safe optimal control problems."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraint_gen import LinearConstraint
from .ev_model import EvParams, LinearDiscreteModel
from .qp import QpProblem, QpSolution, solve_qp  # noqa: F401  (re-exported)
from .reachability import TerminalSafeParams

ROW0_TOL = 1e-9
PHI_TOL = 1e-9


@dataclass
class OcpWeights:
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.0, 0.25, 0.2, 10.0]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.33, 5.0]))
    S: np.ndarray = field(default_factory=lambda: np.diag([0.33, 15.0]))

    def __post_init__(self):
        for name, M, n in (("Q", self.Q, 4), ("R", self.R, 2), ("S", self.S, 2)):
            M = np.asarray(M, float)
            if M.shape != (n, n) or not np.allclose(M, M.T):
                raise ValueError(f"{name} must be a symmetric {n}x{n} matrix")
            if np.linalg.eigvalsh(M).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")


@dataclass
class OcpLimits:
    u_min: np.ndarray
    u_max: np.ndarray
    du_min: np.ndarray
    du_max: np.ndarray
    v_max: float
    d_min: float
    d_max: float
    v_min: float = 0.0

    @classmethod
    def from_params(cls, p: EvParams):
        return cls(np.asarray(p.u_min, float), np.asarray(p.u_max, float),
                   np.asarray(p.du_min, float), np.asarray(p.du_max, float),
                   p.v_max, p.road.d_min, p.road.d_max)


def condense(model, xi0, N: int):
    """Stacked prediction X = Sx + Su z for states 1..N (each 4 wide).

    model is one LinearDiscreteModel or a list of N per-step models.
    """
    models = list(model) if isinstance(model, (list, tuple)) else [model] * N
    if len(models) != N:
        raise ValueError("need one model per step")
    Sx = np.zeros((N, 4))
    Su = np.zeros((4 * N, 2 * N))
    x = np.asarray(xi0, float)
    for k, m in enumerate(models):
        x = m.A_d @ x + m.affine
        Sx[k] = x
        if k > 0:
            Su[4 * k:4 * k + 4, :2 * k] = m.A_d @ Su[4 * (k - 1):4 * k, :2 * k]
        Su[4 * k:4 * k + 4, 2 * k:2 * k + 2] = m.B_d
    return Sx.reshape(-1), Su


def predicted_states(qp: QpProblem, z) -> np.ndarray:
    """States 1..N implied by the inputs z, shape (N, 4)."""
    Sx, Su = qp.meta["Sx"], qp.meta["Su"]
    return (Sx + Su @ z).reshape(-1, 4)


class _Rows:
    def __init__(self, n):
        self.G = []
        self.h = []
        self.n = n
        self.bad = False

    def add(self, row, rhs):
        self.G.append(np.asarray(row, float))
        self.h.append(float(rhs))

    def state_row(self, Sx, Su, k, coef, rhs):
        """coef . x_k <= rhs for k >= 1."""
        coef = np.asarray(coef, float)
        sl = slice(4 * (k - 1), 4 * k)
        self.add(coef @ Su[sl], rhs - coef @ Sx[sl])

    def arrays(self):
        if not self.G:
            return np.zeros((0, self.n)), np.zeros(0)
        return np.vstack(self.G), np.asarray(self.h)


def _base_problem(xi0, model, refs, u_prev, w: OcpWeights, N: int, limits: OcpLimits):
    n = 2 * N
    Sx, Su = condense(model, xi0, N)
    refs = np.asarray(refs, float)
    if refs.ndim == 1:
        refs = np.tile(refs, (N, 1))
    r = refs.reshape(-1)
    e0 = Sx - r
    Qb = np.kron(np.eye(N), w.Q)
    Rb = np.kron(np.eye(N), w.R)
    Sb = np.kron(np.eye(N), w.S)
    D = np.eye(n) - np.eye(n, k=-2)
    d0 = np.zeros(n)
    d0[:2] = np.asarray(u_prev, float)
    H = 2.0 * (Su.T @ Qb @ Su + Rb + D.T @ Sb @ D)
    H = 0.5 * (H + H.T)
    f = 2.0 * (Su.T @ Qb @ e0 - D.T @ Sb @ d0)
    c = float(e0 @ Qb @ e0 + d0 @ Sb @ d0)

    rows = _Rows(n)
    I = np.eye(n)
    umax = np.tile(limits.u_max, N)
    umin = np.tile(limits.u_min, N)
    for i in range(n):
        rows.add(I[i], umax[i])
        rows.add(-I[i], -umin[i])
    dmax = np.tile(limits.du_max, N) + d0
    dmin = np.tile(limits.du_min, N) + d0
    for i in range(n):
        rows.add(D[i], dmax[i])
        rows.add(-D[i], -dmin[i])
    for k in range(1, N + 1):
        rows.state_row(Sx, Su, k, [0, 1, 0, 0], limits.d_max)
        rows.state_row(Sx, Su, k, [0, -1, 0, 0], -limits.d_min)
        rows.state_row(Sx, Su, k, [0, 0, 0, 1], limits.v_max)
        rows.state_row(Sx, Su, k, [0, 0, 0, -1], -limits.v_min)
    return H, f, c, Sx, Su, rows


def _add_linear(rows: _Rows, Sx, Su, xi0, constraints, N):
    for con in constraints:
        if con.k == 0:
            if con.value(xi0[0], xi0[1]) > ROW0_TOL:
                rows.bad = True
            continue
        if con.k > N:
            continue
        rows.state_row(Sx, Su, con.k, [con.q_x, con.q_y, 0, 0], -con.q_t)


def build_smpc_qp(xi0, model, constraints: list[LinearConstraint], refs,
                  u_prev, w: OcpWeights, N: int, limits: OcpLimits) -> QpProblem:
    if N < 1:
        raise ValueError("N must be >= 1")
    H, f, c, Sx, Su, rows = _base_problem(xi0, model, refs, u_prev, w, N, limits)
    _add_linear(rows, Sx, Su, xi0, constraints, N)
    G, h = rows.arrays()
    return QpProblem(H, f, G, h, c, rows.bad, {"Sx": Sx, "Su": Su, "N": N})


def build_ft_qp(xi0_prime, model, constraints: list[LinearConstraint],
                terminal: TerminalSafeParams | None, lead_tv_xN: float | None, refs, u_prev,
                w: OcpWeights, N: int, limits: OcpLimits, lane_center: float | None = None,
                lane_band: float | None = None) -> QpProblem:
    """Fail-safe OCP: SMPC structure plus terminal rows for a safe final state."""
    if N < 1:
        raise ValueError("N must be >= 1")
    H, f, c, Sx, Su, rows = _base_problem(xi0_prime, model, refs, u_prev, w, N, limits)
    _add_linear(rows, Sx, Su, xi0_prime, constraints, N)
    if terminal is not None and lead_tv_xN is not None:
        rows.state_row(Sx, Su, N, [1, 0, 0, 0], lead_tv_xN - terminal.ds_min)
        rows.state_row(Sx, Su, N, [0, 0, 0, 1], terminal.v_n_max)
    rows.state_row(Sx, Su, N, [0, 0, 1, 0], PHI_TOL)
    rows.state_row(Sx, Su, N, [0, 0, -1, 0], PHI_TOL)
    if lane_center is not None:
        rows.state_row(Sx, Su, N, [0, 1, 0, 0], lane_center + lane_band)
        rows.state_row(Sx, Su, N, [0, -1, 0, 0], -(lane_center - lane_band))
    G, h = rows.arrays()
    return QpProblem(H, f, G, h, c, rows.bad, {"Sx": Sx, "Su": Su, "N": N})
