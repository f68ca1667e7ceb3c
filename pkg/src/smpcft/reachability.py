"""Worst-case TV occupancy under traffic rules, using interval boxes.

Positional intervals are enlarged by the EV and TV shapes, so keeping the EV
center outside a box keeps the two footprints apart.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .ev_model import RoadGeometry, lane_of
from .tv_model import TvParams


@dataclass(frozen=True)
class OccupancySet:
    k: int
    x_lo: float
    x_hi: float
    vx_lo: float
    vx_hi: float
    y_lo: float
    y_hi: float
    vy_lo: float
    vy_hi: float
    home_lane: int = 0
    # lateral shape padding carried along so lane clipping acts on centers
    pad_y: float = 0.0

    def contains_point(self, x, y, strict=True) -> bool:
        if strict:
            return self.x_lo < x < self.x_hi and self.y_lo < y < self.y_hi
        return self.x_lo <= x <= self.x_hi and self.y_lo <= y <= self.y_hi

    @property
    def x_center(self):
        return 0.5 * (self.x_lo + self.x_hi)

    @property
    def y_center(self):
        return 0.5 * (self.y_lo + self.y_hi)


@dataclass
class TrafficRules:
    v_lc_min: float = 10.0
    single_lane_change: bool = True
    # cap on x_hi from the vehicle ahead: constant, per-step list, or None
    x_caps: float | Sequence[float] | None = None

    def cap_at(self, k: int):
        if self.x_caps is None:
            return None
        if np.isscalar(self.x_caps):
            return float(self.x_caps)
        return self.x_caps[k] if k < len(self.x_caps) else None


@dataclass(frozen=True)
class TerminalSafeParams:
    ds_min: float
    v_n_max: float
    vtv_n_min: float
    x_n: float


def initial_occupancy(xi_hat0, p: TvParams, road: RoadGeometry) -> OccupancySet:
    x, vx, y, vy = np.asarray(xi_hat0, float)
    wb = np.asarray(p.sens_bounds, float)
    return OccupancySet(
        k=0,
        x_lo=x - wb[0] - road.l_veh, x_hi=x + wb[0] + road.l_veh,
        vx_lo=max(vx - wb[1], 0.0), vx_hi=max(vx + wb[1], 0.0),
        y_lo=y - wb[2] - road.w_veh, y_hi=y + wb[2] + road.w_veh,
        vy_lo=vy - wb[3], vy_hi=vy + wb[3],
        home_lane=lane_of(y, road),
        pad_y=wb[2] + road.w_veh,
    )


def _lateral_limits(lane_lo: int, lane_hi: int, road: RoadGeometry, pad: float):
    lo = road.center(lane_lo) - 0.5 * road.w_lane + 0.5 * road.w_veh
    hi = road.center(lane_hi) + 0.5 * road.w_lane - 0.5 * road.w_veh
    return lo - pad, hi + pad


def _interval_step(lo, hi, vlo, vhi, amin, amax, dt, floor_v=False):
    if floor_v:
        # lowest position: brake until standstill (no reversing)
        if vlo + amin * dt < 0.0:
            new_lo = lo + vlo**2 / (2.0 * -amin)
            new_vlo = 0.0
        else:
            new_lo = lo + vlo * dt + 0.5 * amin * dt**2
            new_vlo = vlo + amin * dt
        new_hi = hi + vhi * dt + 0.5 * amax * dt**2
        new_vhi = max(vhi + amax * dt, 0.0)
        return new_lo, new_hi, new_vlo, new_vhi
    return (lo + vlo * dt + 0.5 * amin * dt**2, hi + vhi * dt + 0.5 * amax * dt**2,
            vlo + amin * dt, vhi + amax * dt)


def propagate_occupancy(set_k: OccupancySet, rules: TrafficRules, p: TvParams,
                        road: RoadGeometry, dt: float) -> OccupancySet:
    amin, aymin = p.u_min
    amax, aymax = p.u_max
    x_lo, x_hi, vx_lo, vx_hi = _interval_step(set_k.x_lo, set_k.x_hi, set_k.vx_lo, set_k.vx_hi,
                                              amin, amax, dt, floor_v=True)
    y_lo, y_hi, vy_lo, vy_hi = _interval_step(set_k.y_lo, set_k.y_hi, set_k.vy_lo, set_k.vy_hi,
                                              aymin, aymax, dt)
    lane = set_k.home_lane
    if vx_hi < rules.v_lc_min:
        lanes = (lane, lane)
    elif rules.single_lane_change:
        lanes = (max(lane - 1, 0), min(lane + 1, road.n_lanes - 1))
    else:
        lanes = (0, road.n_lanes - 1)
    lim_lo, lim_hi = _lateral_limits(lanes[0], lanes[1], road, set_k.pad_y)
    # never shrink below what is already occupied
    lim_lo = min(lim_lo, set_k.y_lo)
    lim_hi = max(lim_hi, set_k.y_hi)
    y_lo, y_hi = max(y_lo, lim_lo), min(y_hi, lim_hi)
    k = set_k.k + 1
    cap = rules.cap_at(k)
    if cap is not None:
        x_hi = max(min(x_hi, cap), x_lo)
    return replace(set_k, k=k, x_lo=x_lo, x_hi=x_hi, vx_lo=vx_lo, vx_hi=vx_hi,
                   y_lo=y_lo, y_hi=y_hi, vy_lo=vy_lo, vy_hi=vy_hi)


def hull_consecutive(set_prev: OccupancySet, set_k: OccupancySet) -> OccupancySet:
    return replace(
        set_k,
        x_lo=min(set_prev.x_lo, set_k.x_lo), x_hi=max(set_prev.x_hi, set_k.x_hi),
        vx_lo=min(set_prev.vx_lo, set_k.vx_lo), vx_hi=max(set_prev.vx_hi, set_k.vx_hi),
        y_lo=min(set_prev.y_lo, set_k.y_lo), y_hi=max(set_prev.y_hi, set_k.y_hi),
        vy_lo=min(set_prev.vy_lo, set_k.vy_lo), vy_hi=max(set_prev.vy_hi, set_k.vy_hi),
    )


def occupancy_sequence(seed: OccupancySet, N: int, rules: TrafficRules, p: TvParams,
                       road: RoadGeometry, dt: float):
    """Hulled occupancy sets for steps 0..N (step 0 is the seed itself)."""
    raw = [seed]
    for _ in range(N):
        raw.append(propagate_occupancy(raw[-1], rules, p, road, dt))
    hulls = [raw[0]] + [hull_consecutive(raw[i - 1], raw[i]) for i in range(1, N + 1)]
    return hulls


def worst_case_rear(xi_hat, N: int, p: TvParams, road: RoadGeometry, dt: float):
    """Lowest possible center position of a TV per step (full braking)."""
    x = xi_hat[0] - p.sens_bounds[0]
    v = max(xi_hat[1] - p.sens_bounds[1], 0.0)
    amin = p.u_min[0]
    out = [x]
    for _ in range(N):
        if v + amin * dt < 0.0:
            x += v**2 / (2.0 * -amin)
            v = 0.0
        else:
            x += v * dt + 0.5 * amin * dt**2
            v += amin * dt
        out.append(x)
    return out


def placeholder_occupancies(xi0_ev, xi_hat0, p: TvParams, road: RoadGeometry,
                            rules: TrafficRules) -> list[tuple[str, OccupancySet, TrafficRules]]:
    """Seeds for a TV behind the EV in the same lane: stay behind, pass left, pass right."""
    ev_lane = lane_of(xi0_ev[1], road)
    tv_lane = lane_of(xi_hat0[2], road)
    if ev_lane != tv_lane or xi_hat0[0] > xi0_ev[0]:
        return []
    base = initial_occupancy(xi_hat0, p, road)
    rear = xi0_ev[0] - 0.5 * road.l_veh
    same = replace(base, x_hi=max(min(base.x_hi, rear), base.x_lo))
    out = [("S", same, replace(rules, x_caps=rear))]
    free = replace(rules, x_caps=None, single_lane_change=True)
    for tag, dl in (("L", 1), ("R", -1)):
        lane = tv_lane + dl
        if 0 <= lane < road.n_lanes:
            shift = dl * road.w_lane
            seed = replace(base, y_lo=base.y_lo + shift, y_hi=base.y_hi + shift, home_lane=lane)
            # the lane change is used up; it must stay in its new lane
            out.append((tag, seed, replace(free, v_lc_min=np.inf)))
    return out


def terminal_bounds(lead_sets: Sequence[OccupancySet], ds_min: float, a_min: float) -> TerminalSafeParams:
    if a_min >= 0:
        raise ValueError("a_min must be negative")
    vtv = min(s.vx_lo for s in lead_sets)
    v_n_max = np.sqrt(max(0.0, vtv**2 + 2.0 * abs(a_min) * ds_min))
    return TerminalSafeParams(ds_min, float(v_n_max), float(vtv), float(lead_sets[-1].x_lo))


def braking_bound(vtv_min: float, ds_min: float, a_min: float) -> float:
    return float(np.sqrt(max(0.0, vtv_min**2 + 2.0 * abs(a_min) * ds_min)))
