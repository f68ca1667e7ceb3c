"""Case selection and half-plane constraints 0 >= q_y*d + q_x*s + q_t.

SMPC constraints are built against the probabilistic safety rectangles, FT
constraints against the worst-case occupancy sets.  The case is chosen once
from the initial geometry; the coefficients use the TV corners at step k.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ev_model import RoadGeometry, lane_of

INCLINED = {"D", "E", "C*L", "C*R"}


@dataclass(frozen=True)
class LinearConstraint:
    q_x: float
    q_y: float
    q_t: float
    k: int = 0
    tv_id: int = -1
    case_id: str = ""
    # TV corner index the boundary passes through (inclined cases)
    anchor: int = 0

    def value(self, s, d):
        return self.q_y * d + self.q_x * s + self.q_t

    def satisfied(self, s, d, tol=1e-9) -> bool:
        return self.value(s, d) <= tol


@dataclass(frozen=True)
class Corners:
    """Index 1=front-left, 2=rear-left, 3=rear-right, 4=front-right."""
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __getitem__(self, i):
        return {1: (self.x_hi, self.y_hi), 2: (self.x_lo, self.y_hi),
                3: (self.x_lo, self.y_lo), 4: (self.x_hi, self.y_lo)}[i]

    def all(self):
        return [self[i] for i in (1, 2, 3, 4)]


@dataclass(frozen=True)
class CaseParams:
    r_lar: float = 200.0
    d_close: float = 90.0
    d_close_ft_min: float = 10.0
    r_llm: float = 10.0

    def __post_init__(self):
        if not self.r_lar > self.d_close > 0:
            raise ValueError("need r_lar > d_close > 0")


def close_distance(v0, vtv, N, dt, base) -> float:
    return base + abs(v0 - vtv) * N * dt


def ft_close_base(v0, N, dt, params: CaseParams) -> float:
    return max(params.d_close_ft_min, abs(v0 * N * dt))


def ev_corners(xi0, road: RoadGeometry) -> Corners:
    s, d = xi0[0], xi0[1]
    return Corners(s - 0.5 * road.l_veh, s + 0.5 * road.l_veh,
                   d - 0.5 * road.w_veh, d + 0.5 * road.w_veh)


def tv_corners(box) -> Corners:
    """Corners of a SafetyRectangle or OccupancySet (anything with x_lo..y_hi)."""
    return Corners(box.x_lo, box.x_hi, box.y_lo, box.y_hi)


# ---------------------------------------------------------------- geometry

def _vertical_behind(c: Corners):
    return 1.0, 0.0, -c[2][0]


def _vertical_ahead(c: Corners):
    return -1.0, 0.0, c[1][0]


def _above(c: Corners):
    # d >= left edge
    return 0.0, -1.0, c[2][1]


def _below(c: Corners, idx=3):
    # d <= right edge
    return 0.0, 1.0, -c[idx][1]


def _inclined_up(ev: Corners, tv: Corners):
    """Line from EV front-right to TV rear-left, EV must stay above it.

    Returns None when no admissible (nonnegative, box-disjoint) slope exists.
    """
    ex, ey = ev[4]
    tx, ty = tv[2]
    if ex < tx:
        q_x = max(0.0, (ey - ty) / (ex - tx))
    elif ey >= ty:
        q_x = 0.0
    else:
        return None
    return q_x, -1.0, ty - q_x * tx


# ---------------------------------------------------------------- SMPC

def smpc_case(xi0, tv0, params: CaseParams, road: RoadGeometry, N: int, dt: float) -> str:
    """Case label from the initial EV/TV geometry.  E is refined per step."""
    dx = xi0[0] - tv0[0]
    f = close_distance(xi0[3], tv0[1], N, dt, params.d_close)
    ev_l = lane_of(xi0[1], road)
    tv_l = lane_of(tv0[2], road)
    if abs(dx) >= params.r_lar:
        return "A"
    if f < -dx:
        return "B"
    if f < dx:
        return "C"
    if dx <= 0:
        if tv_l == ev_l:
            return "D" if ev_l + 1 < road.n_lanes else "D_lim"
        if tv_l == ev_l + 1:
            if xi0[0] + 0.5 * road.w_veh + params.r_llm > tv0[0]:
                return "E3"
            if xi0[3] > tv0[1]:
                return "E"
            return "E2"
        if tv_l >= ev_l + 2:
            return "G"
        return "F"
    if tv_l < ev_l:
        return "F"
    if tv_l == ev_l:
        return "J"
    return "H"


def smpc_coefficients(case: str, ev: Corners, tv: Corners):
    """(q_x, q_y, q_t, case, anchor) for one step, or None for no constraint."""
    if case in ("A", "J"):
        return None
    if case in ("B", "E2", "D_lim"):
        return (*_vertical_behind(tv), case, 2)
    if case == "C":
        return (*_vertical_ahead(tv), case, 1)
    if case == "F":
        return (*_above(tv), case, 2)
    if case in ("E3", "G"):
        return (*_below(tv, 3), case, 3)
    if case == "H":
        return (*_below(tv, 4), case, 4)
    if case in ("D", "E"):
        line = _inclined_up(ev, tv)
        if line is None:
            fallback = "D_lim" if case == "D" else "E2"
            return (*_vertical_behind(tv), fallback, 2)
        return (*line, case, 2)
    raise ValueError(f"unknown case {case}")


def smpc_constraint(xi0, tv0, rect_k, params: CaseParams, road: RoadGeometry, N: int,
                    dt: float, k: int = 0, tv_id: int = -1) -> Optional[LinearConstraint]:
    case = smpc_case(xi0, tv0, params, road, N, dt)
    out = smpc_coefficients(case, ev_corners(xi0, road), tv_corners(rect_k))
    if out is None:
        return None
    q_x, q_y, q_t, cid, anchor = out
    return LinearConstraint(q_x, q_y, q_t, k, tv_id, cid, anchor)


def smpc_constraints(xi0, tv_pred, rects, params, road, N, dt, tv_id=-1) -> list[LinearConstraint]:
    out = []
    for k, rect in enumerate(rects):
        c = smpc_constraint(xi0, tv_pred[0], rect, params, road, N, dt, k, tv_id)
        if c is not None:
            out.append(c)
    return out


# ---------------------------------------------------------------- FT

def ft_case(xi0, tv0, params: CaseParams, road: RoadGeometry, N: int, dt: float) -> str:
    dx = xi0[0] - tv0[0]
    f = close_distance(xi0[3], tv0[1], N, dt, ft_close_base(xi0[3], N, dt, params))
    ev_l = lane_of(xi0[1], road)
    tv_l = lane_of(tv0[2], road)
    tv_c = road.center(tv_l)
    d0 = xi0[1]
    if abs(dx) >= params.r_lar:
        return "A*"
    if f < -dx:
        return "B*"
    if dx <= 0:
        if tv_l == ev_l:
            return "D*"
        if ev_l > tv_l:
            return "Fb*" if d0 >= tv_c + 0.5 * road.w_lane + 0.5 * road.w_veh else "F2*"
        return "Hb*" if d0 <= tv_c - 0.5 * road.w_lane - 0.5 * road.w_veh else "H2*"
    # TV behind the EV
    if tv_l == ev_l:
        return "J*" if dx <= f else "C*"
    return "Fa*" if ev_l > tv_l else "Ha*"


def _inclined_left(ev: Corners, tv: Corners):
    """EV rear-right to left placeholder front-left; EV stays above, slope <= 0."""
    ex, ey = ev[3]
    tx, ty = tv[1]
    if ex == tx:
        return None
    q_x = (ey - ty) / (ex - tx)
    if q_x > 0:
        return None
    return q_x, -1.0, ty - q_x * tx


def _inclined_right(ev: Corners, tv: Corners):
    """EV rear-left to right placeholder front-right; EV stays below, slope >= 0."""
    ex, ey = ev[2]
    tx, ty = tv[4]
    if ex == tx:
        return None
    m = (ey - ty) / (ex - tx)
    if m < 0:
        return None
    return -m, 1.0, -(ty - m * tx)


def ft_coefficients(case: str, ev: Corners, tv: Corners, branch: str = ""):
    if case == "A*":
        return None
    if case in ("B*", "D*", "F2*", "H2*"):
        return (*_vertical_behind(tv), case, 2)
    if case in ("Fa*", "Fb*"):
        return (*_above(tv), case, 2)
    if case in ("Ha*", "Hb*"):
        return (*_below(tv, 3), case, 3)
    if case in ("J*", "C*"):
        # a plain worst-case set (no placeholders were built for this TV, e.g.
        # when the EV moved between measurement and FT start) is treated like
        # the stay-behind branch: the EV stays ahead of the whole box
        if branch in ("S", ""):
            return (*_vertical_ahead(tv), case + "S", 1)
        if branch == "L" and case == "J*":
            return (*_below(tv, 4), "J*L", 4)
        if branch == "R" and case == "J*":
            return (*_above_right(tv), "J*R", 1)
        if branch == "L":
            line = _inclined_left(ev, tv)
            if line is None:
                return (*_vertical_ahead(tv), "C*L,lim", 1)
            return (*line, "C*L", 1)
        if branch == "R":
            line = _inclined_right(ev, tv)
            if line is None:
                return (-1.0, 0.0, tv[4][0], "C*R,lim", 4)
            return (*line, "C*R", 4)
    raise ValueError(f"unknown FT case {case}/{branch}")


def _above_right(tv: Corners):
    # d >= left edge of the right-lane placeholder
    return 0.0, -1.0, tv[1][1]


def ft_constraints(xi0, tv0, occupancy, params: CaseParams, road: RoadGeometry, N: int,
                   dt: float, tv_id: int = -1) -> list[LinearConstraint]:
    """occupancy: list of (branch, [sets per step]); branch '' for a regular TV."""
    case = ft_case(xi0, tv0, params, road, N, dt)
    ev = ev_corners(xi0, road)
    out = []
    for branch, sets in occupancy:
        for k, box in enumerate(sets):
            res = ft_coefficients(case, ev, tv_corners(box), branch)
            if res is None:
                continue
            q_x, q_y, q_t, cid, anchor = res
            out.append(LinearConstraint(q_x, q_y, q_t, k, tv_id, cid, anchor))
    return out


# ---------------------------------------------------------------- checks

def exclusion_check(c: LinearConstraint, corners: Corners, tol: float = 1e-9) -> bool:
    """True when the TV region lies in the EV-infeasible half-plane.

    Boundary points count as excluded (the region is open).  For inclined
    constraints the anchor corner must lie on the boundary instead.
    """
    if c.case_id in INCLINED:
        x, y = corners[c.anchor]
        return abs(c.value(x, y)) <= tol * max(1.0, abs(c.q_t))
    return all(c.value(x, y) >= -tol for x, y in corners.all()) and any(
        c.value(x, y) > tol for x, y in corners.all())


def line_disjoint(c: LinearConstraint, corners: Corners, tol: float = 1e-9) -> bool:
    """True if the boundary line does not cut the open box."""
    vals = [c.value(x, y) for x, y in corners.all()]
    return min(vals) >= -tol or max(vals) <= tol
