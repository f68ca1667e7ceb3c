"""Per-step SMPC+FT decision logic and the safe input sequence.

The SMPC input is applied only if a fail-safe trajectory exists from the
state it leads to.  Otherwise a fail-safe input is applied, and if no
fail-safe trajectory exists at all, the stored safe sequence is consumed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import constraint_gen as cg
from .ev_model import (EvParams, RoadGeometry, lane_of, linearize_along, linearize_discretize,
                       step_plant)
from .ocp import OcpLimits, OcpWeights, build_ft_qp, build_smpc_qp
from .qp import solve_qp
from .reachability import (OccupancySet, TrafficRules, initial_occupancy, occupancy_sequence,
                           placeholder_occupancies, terminal_bounds, worst_case_rear)
from .tv_model import TvParams, tv_predict, tv_reference
from .uncertainty import error_cov_sequence, safety_rectangle, tolerance_level

PHI_EPS = 1e-6
V_EPS = 1e-9


@dataclass
class PlannerConfig:
    ev: EvParams = field(default_factory=EvParams)
    tv: TvParams = field(default_factory=TvParams)
    weights: OcpWeights = field(default_factory=OcpWeights)
    cases: cg.CaseParams = field(default_factory=cg.CaseParams)
    mode: str = "smpcft"
    beta: float = 0.8
    N_smpc: int = 10
    N_ft: int = 10
    dt: float = 0.2
    v_ref: float = 27.0
    ds_min: float = 22.5
    v_lc_min: float = 10.0
    # tightening of the terminal in-lane band (m), absorbs model mismatch
    lane_margin: float = 0.0
    # collision-row tightenings (m) tried in turn when the plant check rejects a plan
    ft_margins: tuple = (0.0, 0.1, 0.3)

    @property
    def road(self) -> RoadGeometry:
        return self.ev.road

    @property
    def a_min(self) -> float:
        return float(self.ev.u_min[0])


@dataclass
class SafeInputSequence:
    inputs: np.ndarray
    origin_step: int = 0
    # absolute step of inputs[0] and of occupancy[*][0]
    start_step: int = 0
    occ_start: int = 0
    occupancy: list = field(default_factory=list)

    def __len__(self):
        return len(self.inputs)

    def shifted(self) -> "SafeInputSequence":
        if len(self.inputs) <= 1:
            if len(self.inputs) == 1 and np.all(self.inputs[0] == 0):
                rest = self.inputs.copy()
            else:
                raise RuntimeError("safe input sequence exhausted")
        else:
            rest = self.inputs[1:].copy()
        return SafeInputSequence(rest, self.origin_step, self.start_step + 1, self.occ_start,
                                 self.occupancy)


@dataclass
class StepDecision:
    applied: np.ndarray
    source: str
    smpc_feasible: bool
    ft_feasible: bool
    new_safe_sequence: Optional[SafeInputSequence]
    planned_smpc: Optional[np.ndarray] = None
    planned_ft: Optional[np.ndarray] = None
    ft_lane: Optional[int] = None


@dataclass
class PlannerState:
    safe: Optional[SafeInputSequence]
    u_prev: np.ndarray = field(default_factory=lambda: np.zeros(2))
    smpc_plan: Optional[np.ndarray] = None
    step: int = 0


# ---------------------------------------------------------------- safe states

def in_lane(d: float, road: RoadGeometry, tol: float = 1e-9) -> bool:
    c = road.center(lane_of(d, road))
    return abs(d - c) <= 0.5 * (road.w_lane - road.w_veh) + tol


def is_safe_state(xi, lead_tv, road: RoadGeometry) -> bool:
    if not in_lane(xi[1], road):
        return False
    if abs(xi[2]) > PHI_EPS:
        return False
    if xi[3] <= V_EPS or lead_tv is None:
        return True
    return xi[3] < lead_tv[1]


def _heading_fix(phi, v, a, dt, p: EvParams):
    """Steering angle that zeroes the heading in one plant step at acceleration a."""
    dist = v * dt + 0.5 * a * dt**2
    if abs(phi) < 1e-15 or dist <= 0:
        return 0.0
    sa = np.clip(-phi * p.l_r / dist, -1.0, 1.0)
    alpha = np.arcsin(sa)
    return float(np.arctan(np.tan(alpha) * (p.l_r + p.l_f) / p.l_r))


def braking_sequence(v: float, a_min: float, dt: float, phi: float = 0.0,
                     p: EvParams | None = None, pad: int = 1) -> np.ndarray:
    """Full braking to standstill with zero steering, then zero inputs.

    A nonzero heading is removed with the first braking step, so the
    vehicle ends aligned with the road.
    """
    if a_min >= 0 or dt <= 0:
        raise ValueError("need a_min < 0 and dt > 0")
    out = []
    rem = float(max(v, 0.0))
    while rem > V_EPS:
        if rem + a_min * dt >= -1e-12:
            a = a_min
        else:
            a = -rem / dt
        out.append([a, 0.0])
        rem = max(rem + a * dt, 0.0)
    if out and phi != 0.0 and p is not None:
        out[0][1] = _heading_fix(phi, v, out[0][0], dt, p)
    out.extend([[0.0, 0.0]] * pad)
    return np.asarray(out, float)


def simulate_inputs(xi, inputs, dt, p: EvParams) -> np.ndarray:
    states = [np.asarray(xi, float)]
    for u in inputs:
        states.append(step_plant(states[-1], u, dt, p))
    return np.asarray(states)


def with_braking_tail(xi_start, inputs, dt, p: EvParams, pad: int = 1) -> np.ndarray:
    end = simulate_inputs(xi_start, inputs, dt, p)[-1]
    tail = braking_sequence(end[3], float(p.u_min[0]), dt, end[2], p, pad)
    if len(inputs) == 0:
        return tail
    return np.vstack([np.asarray(inputs, float), tail])


def update_safe_sequence(branch: int, ft_inputs, prev: Optional[SafeInputSequence], xi_start,
                         dt: float, p: EvParams, step: int = 0, occupancy=None,
                         occ_start: int = 0) -> SafeInputSequence:
    """branch 1: FT from the post-SMPC state; 2: FT from the current state; 3: shift."""
    if branch == 3:
        if prev is None:
            raise ValueError("branch 3 needs a previous sequence")
        return prev.shifted()
    ft_inputs = np.asarray(ft_inputs, float)
    if branch == 1:
        seq = with_braking_tail(xi_start, ft_inputs, dt, p)
        return SafeInputSequence(seq, step, step + 1, occ_start, occupancy or [])
    if branch == 2:
        seq = with_braking_tail(xi_start, ft_inputs, dt, p)[1:]
        return SafeInputSequence(seq, step, step + 1, occ_start, occupancy or [])
    raise ValueError("branch must be 1, 2 or 3")


def heading_excess(phi: float, road: RoadGeometry):
    """How far a rotated EV body reaches past the axis-aligned footprint, per axis."""
    hl, hw = 0.5 * road.l_veh, 0.5 * road.w_veh
    c, s = abs(np.cos(phi)), abs(np.sin(phi))
    return max(hl * c + hw * s - hl, 0.0), max(hl * s + hw * c - hw, 0.0)


def _hits(box: OccupancySet, x, gx, gy) -> bool:
    # occupancy boxes are already padded by the footprint
    return (box.x_lo - gx < x[0] < box.x_hi + gx) and (box.y_lo - gy < x[1] < box.y_hi + gy)


def validate_safe_sequence(xi, seq, occupancy: Sequence[Sequence[OccupancySet]], dt: float,
                           p: EvParams, offset: int = 0) -> bool:
    """Simulate the sequence on the plant and check it is a valid backup.

    occupancy[j][t] is the worst-case set of TV branch j at step t + offset
    counted from the state xi.  Steps without a set are not checked for
    collision; the final state must be at standstill and safe.
    """
    inputs = seq.inputs if isinstance(seq, SafeInputSequence) else np.asarray(seq, float)
    states = simulate_inputs(xi, inputs, dt, p)
    for i, x in enumerate(states):
        t = i + offset
        gx, gy = heading_excess(x[2], p.road)
        for sets in occupancy:
            if 0 <= t < len(sets) and _hits(sets[t], x, gx, gy):
                return False
    end = states[-1]
    if end[3] > V_EPS:
        return False
    return is_safe_state(end, None, p.road)


def check_carried_sequence(xi, seq: SafeInputSequence, step: int, dt: float, p: EvParams) -> bool:
    """Validate a carried sequence against the occupancy it was planned with."""
    return validate_safe_sequence(xi, seq, seq.occupancy, dt, p, offset=step - seq.occ_start)


def initial_safe_sequence(xi0, dt, p: EvParams, occupancy=None, step: int = 0) -> SafeInputSequence:
    seq = braking_sequence(xi0[3], float(p.u_min[0]), dt, xi0[2], p)
    return SafeInputSequence(seq, step, step, step, occupancy or [])


# ---------------------------------------------------------------- predictions

@dataclass
class TvWorld:
    """Everything derived from one set of TV measurements."""
    meas: list
    preds: list
    # per TV: list of (branch, sets for steps 0..N_ft+1)
    occupancy: list

    def flat_occupancy(self):
        return [sets for occ in self.occupancy for _, sets in occ]


def build_world(xi0, tv_meas, cfg: PlannerConfig) -> TvWorld:
    road, p = cfg.road, cfg.tv
    preds = [tv_predict(m, cfg.N_smpc, p, road, tv_reference(m, road)) for m in tv_meas]
    Nocc = cfg.N_ft + 1
    occ = []
    for i, m in enumerate(tv_meas):
        ph = placeholder_occupancies(xi0, m, p, road, TrafficRules(cfg.v_lc_min))
        if ph:
            occ.append([(tag, occupancy_sequence(seed, Nocc, rules, p, road, cfg.dt))
                        for tag, seed, rules in ph])
            continue
        lane = lane_of(m[2], road)
        lead = None
        for j, o in enumerate(tv_meas):
            if j != i and lane_of(o[2], road) == lane and o[0] > m[0]:
                if lead is None or o[0] < lead[0]:
                    lead = o
        caps = worst_case_rear(lead, Nocc, p, road, cfg.dt) if lead is not None else None
        rules = TrafficRules(cfg.v_lc_min, True, caps)
        seed = initial_occupancy(m, p, road)
        occ.append([("", occupancy_sequence(seed, Nocc, rules, p, road, cfg.dt))])
    return TvWorld(list(tv_meas), preds, occ)


def smpc_refs(xi0, cfg: PlannerConfig, N: int):
    d_ref = cfg.road.center(lane_of(xi0[1], cfg.road))
    return np.array([0.0, d_ref, 0.0, cfg.v_ref])


def solve_smpc(xi0, world: TvWorld, u_prev, cfg: PlannerConfig):
    road, N = cfg.road, cfg.N_smpc
    sig = error_cov_sequence(N, cfg.tv)
    kappa = tolerance_level(cfg.beta)
    cons = []
    for i, pred in enumerate(world.preds):
        rects = [safety_rectangle(xi0, pred[k], sig[k], kappa, road, cfg.a_min, k)
                 .exclusion_region() for k in range(N + 1)]
        cons += cg.smpc_constraints(xi0, pred, rects, cfg.cases, road, N, cfg.dt, tv_id=i)
    model = linearize_discretize(xi0, cfg.dt, cfg.ev)
    qp = build_smpc_qp(xi0, model, cons, smpc_refs(xi0, cfg, N), u_prev, cfg.weights, N,
                       OcpLimits.from_params(cfg.ev))
    sol = solve_qp(qp)
    if not sol.optimal:
        return None
    return sol.z.reshape(N, 2)


def tighten(cons, margin: float):
    """Shift each boundary by margin metres into the free side (k = 0 rows untouched)."""
    if margin == 0.0:
        return cons
    return [c if c.k == 0 else replace(c, q_t=c.q_t + margin * float(np.hypot(c.q_x, c.q_y)))
            for c in cons]


def _terminal_lanes(d, road: RoadGeometry):
    lane = lane_of(d, road)
    others = [l for l in range(road.n_lanes) if l != lane and abs(l - lane) == 1]
    others.sort(key=lambda l: abs(road.center(l) - d))
    return [lane] + others


def solve_ft(xi_s, world: TvWorld, u_prev, cfg: PlannerConfig, shift: int):
    """Fail-safe trajectory from xi_s, which lies `shift` steps after the measurements.

    Returns (inputs, lane) for the first terminal lane whose solution also
    passes the plant re-simulation check, or None.
    """
    road, N, dt = cfg.road, cfg.N_ft, cfg.dt
    cons = []
    for i, (m, occ) in enumerate(zip(world.meas, world.occupancy)):
        tv_s = np.array([m[0] + m[1] * dt * shift, m[1], m[2] + m[3] * dt * shift, m[3]])
        branches = [(tag, sets[shift:shift + N + 1]) for tag, sets in occ]
        cons += cg.ft_constraints(xi_s, tv_s, branches, cfg.cases, road, N, dt, tv_id=i)
    model = linearize_discretize(xi_s, dt, cfg.ev)
    limits = OcpLimits.from_params(cfg.ev)
    band = 0.5 * (road.w_lane - road.w_veh) - cfg.lane_margin
    flat = [sets[shift:] for sets in world.flat_occupancy()]
    for lane in _terminal_lanes(xi_s[1], road):
        lead_sets = None
        lead_x = None
        for m, occ in zip(world.meas, world.occupancy):
            if lane_of(m[2], road) != lane or occ[0][0] != "":
                continue
            x_s = m[0] + m[1] * dt * shift
            if x_s > xi_s[0] and (lead_x is None or x_s < lead_x):
                lead_x = x_s
                lead_sets = occ[0][1][shift:shift + N + 1]
        term = None
        xN = None
        if lead_sets is not None:
            term = terminal_bounds(lead_sets, cfg.ds_min, cfg.a_min)
            xN = term.x_n
        # the cost pulls toward the candidate lane so the plan does not fight the band
        refs = np.array([0.0, road.center(lane), 0.0, cfg.v_ref])
        # first the model linearized at the start state, then per-step models
        # along the rejected plan's plant rollout with growing row tightening
        lin = model
        for margin in (0.0,) + tuple(cfg.ft_margins):
            qp = build_ft_qp(xi_s, lin, tighten(cons, margin), term, xN, refs, u_prev,
                             cfg.weights, N, limits, road.center(lane), band - margin)
            sol = solve_qp(qp)
            if not sol.optimal:
                break
            U = sol.z.reshape(N, 2)
            full = with_braking_tail(xi_s, U, dt, cfg.ev)
            if validate_safe_sequence(xi_s, full, flat, dt, cfg.ev):
                return U, lane
            lin = linearize_along(simulate_inputs(xi_s, U, dt, cfg.ev)[:N], U, dt, cfg.ev)
    return None


def plan_step(xi0, tv_meas, state: PlannerState, cfg: PlannerConfig) -> StepDecision:
    xi0 = np.asarray(xi0, float)
    world = build_world(xi0, tv_meas, cfg)
    h = state.step
    u_prev = state.u_prev
    occ_all = world.flat_occupancy()

    if cfg.mode == "smpc":
        U = solve_smpc(xi0, world, u_prev, cfg)
        if U is not None:
            return StepDecision(U[0].copy(), "SMPC", True, False, state.safe, planned_smpc=U)
        # keep executing the last optimistic plan, then coast
        plan = state.smpc_plan
        if plan is not None and len(plan) > 1:
            rest = plan[1:]
            return StepDecision(rest[0].copy(), "SMPC", False, False, state.safe, planned_smpc=rest)
        return StepDecision(np.zeros(2), "SMPC", False, False, state.safe,
                            planned_smpc=np.zeros((1, 2)))

    smpc_ok = False
    U_smpc = None
    if cfg.mode == "smpcft":
        U_smpc = solve_smpc(xi0, world, u_prev, cfg)
        smpc_ok = U_smpc is not None
        if smpc_ok:
            xi1 = step_plant(xi0, U_smpc[0], cfg.dt, cfg.ev)
            ft = solve_ft(xi1, world, U_smpc[0], cfg, shift=1)
            if ft is not None:
                U_ft, lane = ft
                seq = update_safe_sequence(1, U_ft, None, xi1, cfg.dt, cfg.ev, h, occ_all, h)
                return StepDecision(U_smpc[0].copy(), "SMPC", True, True, seq, U_smpc, U_ft, lane)
    if not smpc_ok:
        ft = solve_ft(xi0, world, u_prev, cfg, shift=0)
        if ft is not None:
            U_ft, lane = ft
            seq = update_safe_sequence(2, U_ft, None, xi0, cfg.dt, cfg.ev, h, occ_all, h)
            return StepDecision(U_ft[0].copy(), "FT", smpc_ok, True, seq, U_smpc, U_ft, lane)
    if state.safe is None:
        raise RuntimeError("no safe input sequence available")
    applied = state.safe.inputs[0].copy()
    seq = update_safe_sequence(3, None, state.safe, xi0, cfg.dt, cfg.ev)
    return StepDecision(applied, "SAFE", smpc_ok, False, seq, U_smpc, None)
