"""Dense convex QP:  min 0.5 z'Hz + f'z + c  s.t.  Gz <= h.

Feasibility is settled first by a phase-1 LP minimising total violation;
the optimum is then found by a primal active-set method started from the
phase-1 point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

FEAS_TOL = 1e-6
KKT_TOL = 1e-6


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray
    c: float = 0.0
    # set when a constant row (no decision variables) is already violated
    structurally_infeasible: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.H.shape[0]

    def objective(self, z):
        return 0.5 * z @ self.H @ z + self.f @ z + self.c


@dataclass
class QpSolution:
    status: str
    z: np.ndarray | None
    objective: float = np.inf
    kkt_residual: float = np.inf
    multipliers: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self):
        return self.status == "optimal"


def _check_psd(H):
    if H.shape[0] == 0:
        return
    if not np.allclose(H, H.T, atol=1e-9 * max(1.0, np.abs(H).max())):
        raise ValueError("H must be symmetric")
    lam = np.linalg.eigvalsh(0.5 * (H + H.T))
    if lam.min() < -1e-9 * max(1.0, abs(lam.max())):
        raise ValueError("H must be positive semidefinite")


def phase_one(G, h):
    """Minimise sum of violations; returns (violation, z)."""
    m, n = G.shape
    if m == 0:
        return 0.0, np.zeros(n)
    cost = np.concatenate([np.zeros(n), np.ones(m)])
    A = np.hstack([G, -np.eye(m)])
    bounds = [(None, None)] * n + [(0, None)] * m
    res = linprog(cost, A_ub=A, b_ub=h, bounds=bounds, method="highs")
    if res.status != 0:
        return np.inf, np.zeros(n)
    z = res.x[:n]
    viol = float(np.maximum(G @ z - h, 0.0).sum())
    return viol, z


def kkt_residual(p: QpProblem, z, lam) -> float:
    grad = p.H @ z + p.f + p.G.T @ lam
    slack = p.G @ z - p.h
    scale = max(1.0, np.abs(p.f).max(initial=0.0), np.abs(p.H).max(initial=0.0))
    stat = np.abs(grad).max(initial=0.0) / scale
    prim = max(slack.max(initial=0.0), 0.0)
    dual = max(-lam.min(initial=0.0), 0.0)
    comp = np.abs(lam * slack).max(initial=0.0) / scale
    return float(max(stat, prim, dual, comp))


def _independent(rows, G, tol=1e-10):
    """Greedy subset of row indices with linearly independent rows."""
    keep = []
    basis = np.zeros((0, G.shape[1]))
    for i in rows:
        cand = np.vstack([basis, G[i]])
        if np.linalg.matrix_rank(cand, tol=tol * max(1.0, np.abs(cand).max())) > basis.shape[0]:
            keep.append(i)
            basis = cand
    return keep


def _eqp(H, g, A):
    """Step p and multipliers for min 0.5p'Hp + g'p s.t. Ap = 0."""
    n = H.shape[0]
    m = A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([-g, np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def solve_qp(p: QpProblem, max_iter: int = 500) -> QpSolution:
    H = np.asarray(p.H, float)
    f = np.asarray(p.f, float)
    G = np.asarray(p.G, float).reshape(-1, H.shape[0])
    h = np.asarray(p.h, float)
    _check_psd(H)
    if p.structurally_infeasible:
        return QpSolution("infeasible", None)
    viol, z = phase_one(G, h)
    if viol > FEAS_TOL:
        return QpSolution("infeasible", None)
    m = G.shape[0]
    # pull the start point onto the feasible set where phase 1 left tiny slack
    slack = h - G @ z
    active = [i for i in np.argsort(slack, kind="stable") if slack[i] <= 1e-9]
    W = _independent(active, G)
    lam_full = np.zeros(m)
    scale = max(1.0, np.abs(H).max(initial=0.0), np.abs(f).max(initial=0.0))
    lam_tol = 1e-10 * scale
    row_norm = np.linalg.norm(G, axis=1)
    # after a full unblocked step the iterate minimises over the working set
    at_min = False
    it = 0
    for it in range(1, max_iter + 1):
        g = H @ z + f
        A = G[W] if W else np.zeros((0, H.shape[0]))
        step, lam = _eqp(H, g, A)
        if at_min or np.abs(step).max(initial=0.0) <= 1e-12 * max(1.0, np.abs(z).max(initial=0.0)):
            at_min = False
            lam_full[:] = 0.0
            if W:
                lam_full[W] = lam
            if not W or lam.min() >= -lam_tol:
                break
            j = int(np.argmin(lam))
            W.pop(j)
            continue
        Gp = G @ step
        # rows dependent on the working set give Gp ~ roundoff, never blocking
        cand = Gp > 1e-9 * row_norm * np.linalg.norm(step)
        if W:
            cand[W] = False
        alpha = 1.0
        block = -1
        if cand.any():
            idx = np.flatnonzero(cand)
            # huge slack over tiny Gp overflows to inf, which never blocks
            with np.errstate(over="ignore"):
                ratios = (h[idx] - G[idx] @ z) / Gp[idx]
            j = int(np.argmin(ratios))
            if ratios[j] < 1.0:
                alpha = max(float(ratios[j]), 0.0)
                block = int(idx[j])
        z = z + alpha * step
        if block >= 0:
            W.append(block)
        else:
            at_min = True
    else:
        return QpSolution("max_iter", z, p.objective(z), np.inf, lam_full, it)
    res = kkt_residual(p, z, lam_full)
    if res > KKT_TOL:
        # polish: re-solve the equality problem on the final working set
        z, lam_full, res = _polish(p, z, W, lam_full)
    return QpSolution("optimal", z, float(p.objective(z)), res, lam_full, it)


def _polish(p: QpProblem, z, W, lam_full):
    A = p.G[W] if W else np.zeros((0, p.n))
    n = p.n
    K = np.block([[p.H, A.T], [A, np.zeros((len(W), len(W)))]])
    rhs = np.concatenate([-p.f, p.h[W] if W else np.zeros(0)])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    z2 = sol[:n]
    lam2 = np.zeros_like(lam_full)
    if W:
        lam2[W] = sol[n:]
    r2 = kkt_residual(p, z2, lam2)
    r1 = kkt_residual(p, z, lam_full)
    if r2 < r1:
        return z2, lam2, r2
    return z, lam_full, r1
