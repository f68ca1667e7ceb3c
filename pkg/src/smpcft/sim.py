"""Closed-loop highway simulation: scripted traffic, collision checks, cost and traces."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .constraint_gen import CaseParams
from .ev_model import EvParams, RoadGeometry, lane_of, step_plant
from .ocp import OcpWeights
from .supervisor import (PlannerConfig, PlannerState, check_carried_sequence, initial_safe_sequence,
                         build_world, plan_step)
from .tv_model import TvParams, TvReference, measure, tv_feedback_input, tv_step_true

MODES = ("smpcft", "smpc", "ft")

REGULAR_TVS = [
    [70.0, 20.0, 0.0, 0.0],
    [125.0, 20.0, 3.5, 0.0],
    [-245.0, 20.0, 0.0, 0.0],
    [-35.0, 32.0, 7.0, 0.0],
    [40.0, 32.0, 7.0, 0.0],
]


# ---------------------------------------------------------------- configuration

@dataclass
class TvScriptEvent:
    """trigger: {"step": h} | {"passed": j} | {"gap_below": [j, dist]}
    action: {"vx": v} | {"lane": l} | {"brake": true}"""
    trigger: dict
    action: dict

    def __post_init__(self):
        if len(self.trigger) != 1 or next(iter(self.trigger)) not in ("step", "passed", "gap_below"):
            raise ValueError(f"bad trigger {self.trigger}")
        if not self.action or any(k not in ("vx", "lane", "brake") for k in self.action):
            raise ValueError(f"bad action {self.action}")


@dataclass
class TvSpec:
    init: list
    script: list = field(default_factory=list)
    # optional per-vehicle limit on lateral acceleration (m/s^2)
    ay_max: Optional[float] = None

    def __post_init__(self):
        if len(self.init) != 4:
            raise ValueError("TV init must have 4 entries")
        self.script = [e if isinstance(e, TvScriptEvent) else TvScriptEvent(**e) for e in self.script]
        if self.ay_max is not None and self.ay_max <= 0:
            raise ValueError("ay_max must be positive")


@dataclass
class PlannerSpec:
    mode: str = "smpcft"
    beta: float = 0.8
    N_smpc: int = 10
    N_ft: int = 10
    dt: float = 0.2
    Q: list = field(default_factory=lambda: [0.0, 0.25, 0.2, 10.0])
    R: list = field(default_factory=lambda: [0.33, 5.0])
    S: list = field(default_factory=lambda: [0.33, 15.0])
    u_min: list = field(default_factory=lambda: [-9.0, -0.2])
    u_max: list = field(default_factory=lambda: [5.0, 0.2])
    du_min: list = field(default_factory=lambda: [-9.0, -0.4])
    du_max: list = field(default_factory=lambda: [9.0, 0.4])
    v_max: float = 35.0
    l_r: float = 2.0
    l_f: float = 2.0
    ds_min: float = 22.5
    v_lc_min: float = 10.0
    r_lar: float = 200.0
    d_close: float = 90.0
    d_close_ft_min: float = 10.0
    r_llm: float = 10.0
    lane_margin: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.N_smpc < 1 or self.N_ft < 1 or self.dt <= 0:
            raise ValueError("horizons and dt must be positive")


@dataclass
class NoiseSpec:
    tv_process: bool = False
    sensor: bool = True
    w_cov: list = field(default_factory=lambda: [0.44, 0.09])
    sens_cov: list = field(default_factory=lambda: [0.25, 0.25, 0.028, 0.028])
    sens_bounds: list = field(default_factory=lambda: [0.25, 0.25, 0.028, 0.028])


@dataclass
class ScenarioConfig:
    road: RoadGeometry = field(default_factory=RoadGeometry)
    ev_init: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 27.0])
    ev_ref: list = field(default_factory=lambda: [0.0, 0.0, 27.0])
    tvs: list = field(default_factory=lambda: [TvSpec(list(x)) for x in REGULAR_TVS])
    planner: PlannerSpec = field(default_factory=PlannerSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    n_steps: int = 125

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        if len(self.ev_init) != 4 or len(self.ev_ref) != 3:
            raise ValueError("ev_init needs 4 entries and ev_ref 3")
        self.tvs = [t if isinstance(t, TvSpec) else TvSpec(**t) for t in self.tvs]
        if self.ev_init[3] < 0:
            raise ValueError("initial EV speed must be non-negative")

    def planner_config(self) -> PlannerConfig:
        p = self.planner
        ev = EvParams(p.l_r, p.l_f, np.array(p.u_min, float), np.array(p.u_max, float),
                      np.array(p.du_min, float), np.array(p.du_max, float), p.v_max, self.road)
        return PlannerConfig(
            ev=ev, tv=self.tv_params(),
            weights=OcpWeights(np.diag(p.Q), np.diag(p.R), np.diag(p.S)),
            cases=CaseParams(p.r_lar, p.d_close, p.d_close_ft_min, p.r_llm),
            mode=p.mode, beta=p.beta, N_smpc=p.N_smpc, N_ft=p.N_ft, dt=p.dt,
            v_ref=float(self.ev_ref[2]), ds_min=p.ds_min, v_lc_min=p.v_lc_min,
            lane_margin=p.lane_margin)

    def tv_params(self) -> TvParams:
        n = self.noise
        return TvParams(dt=self.planner.dt, w_cov=np.diag(n.w_cov), sens_cov=np.diag(n.sens_cov),
                        sens_bounds=np.array(n.sens_bounds, float))


def _strict(cls, data: dict, name: str):
    known = set(cls.__dataclass_fields__)
    extra = set(data) - known
    if extra:
        raise ValueError(f"unknown keys in {name}: {sorted(extra)}")
    return cls(**data)


def scenario_from_dict(data: dict) -> ScenarioConfig:
    data = dict(data)
    kw = {}
    for key, cls in (("road", RoadGeometry), ("planner", PlannerSpec), ("noise", NoiseSpec)):
        if key in data:
            kw[key] = _strict(cls, data.pop(key), key)
    if "tvs" in data:
        tvs = []
        for i, t in enumerate(data.pop("tvs")):
            t = dict(t)
            t["script"] = [_strict(TvScriptEvent, e, f"tvs[{i}].script") for e in t.get("script", [])]
            tvs.append(_strict(TvSpec, t, f"tvs[{i}]"))
        kw["tvs"] = tvs
    extra = set(data) - set(ScenarioConfig.__dataclass_fields__)
    if extra:
        raise ValueError(f"unknown keys: {sorted(extra)}")
    kw.update(data)
    return ScenarioConfig(**kw)


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return asdict(cfg)


# ---------------------------------------------------------------- geometry and cost

def _ev_axes(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([c, s]), np.array([-s, c])


def collision_check(ev, tvs, road: RoadGeometry) -> bool:
    """Separating-axis test: oriented EV rectangle against axis-aligned TV rectangles."""
    s, d, phi = ev[0], ev[1], ev[2]
    hl, hw = 0.5 * road.l_veh, 0.5 * road.w_veh
    ax_u, ax_v = _ev_axes(phi)
    # EV half-extent projected on the world axes
    ex = hl * abs(ax_u[0]) + hw * abs(ax_v[0])
    ey = hl * abs(ax_u[1]) + hw * abs(ax_v[1])
    for tv in tvs:
        dx, dy = tv[0] - s, tv[2] - d
        if abs(dx) >= ex + hl or abs(dy) >= ey + hw:
            continue
        sep = False
        for ax, own in ((ax_u, hl), (ax_v, hw)):
            proj = hl * abs(ax[0]) + hw * abs(ax[1])
            if abs(dx * ax[0] + dy * ax[1]) >= own + proj:
                sep = True
                break
        if not sep:
            return True
    return False


def min_gap(ev, tvs, road: RoadGeometry) -> float:
    """Smallest axis-aligned clearance between the EV and any TV body (heading ignored)."""
    if len(tvs) == 0:
        return float("inf")
    gaps = [max(abs(t[0] - ev[0]) - road.l_veh, abs(t[2] - ev[1]) - road.w_veh) for t in tvs]
    return float(min(gaps))


def total_cost(states, inputs, d_refs, v_ref: float, w: OcpWeights) -> float:
    """Closed-loop cost of an applied trajectory.

    states has one more row than inputs; d_refs[k] is the lateral reference
    in force when inputs[k] was chosen.
    """
    states = np.asarray(states, float)
    inputs = np.asarray(inputs, float).reshape(-1, 2)
    J = 0.0
    u_prev = np.zeros(2)
    for k, u in enumerate(inputs):
        x = states[k + 1]
        e = np.array([0.0, x[1] - d_refs[k], x[2], x[3] - v_ref])
        du = u - u_prev
        J += e @ w.Q @ e + u @ w.R @ u + du @ w.S @ du
        u_prev = u
    return float(J)


# ---------------------------------------------------------------- traffic script

@dataclass
class _TvState:
    vx_ref: float
    lane: int
    braking: bool = False
    fired: int = 0


def _trigger_fires(trig, i, tvs, h, road: RoadGeometry, p: TvParams) -> bool:
    kind, arg = next(iter(trig.items()))
    if kind == "step":
        return h >= int(arg)
    me = tvs[i]
    if kind == "passed":
        return me[0] > tvs[int(arg)][0] + road.l_veh
    j, dist = int(arg[0]), float(arg[1])
    return 0.0 <= tvs[j][0] - me[0] <= dist


def _script_inputs(specs, states, tvs, h, road: RoadGeometry, p: TvParams):
    out = []
    for i, (spec, st) in enumerate(zip(specs, states)):
        # events fire in order, one list position at a time
        while st.fired < len(spec.script):
            ev = spec.script[st.fired]
            if not _trigger_fires(ev.trigger, i, tvs, h, road, p):
                break
            act = ev.action
            if "vx" in act:
                st.vx_ref = float(act["vx"])
                st.braking = False
            if "lane" in act:
                st.lane = int(act["lane"])
            if act.get("brake"):
                st.braking = True
            st.fired += 1
        ref = TvReference(st.vx_ref, road.center(st.lane))
        u = tv_feedback_input(tvs[i], ref, p)
        if st.braking:
            # full braking, but only down to standstill
            u[0] = max(p.u_min[0], -tvs[i][1] / p.dt)
        if spec.ay_max is not None:
            u[1] = np.clip(u[1], -spec.ay_max, spec.ay_max)
        out.append(u)
    return out


# ---------------------------------------------------------------- simulation

@dataclass
class SimResult:
    trace: list
    collided: bool
    collision_step: Optional[int]
    j_sim: float
    seed: int
    states: np.ndarray
    inputs: np.ndarray
    invariant_ok: bool = True
    # index of the TV hit first (None without collision)
    collision_tv: Optional[int] = None

    def counts(self):
        src = [r["source"] for r in self.trace]
        return {s: src.count(s) for s in ("SMPC", "FT", "SAFE")}

    def summary(self) -> dict:
        c = self.counts()
        return {"seed": self.seed, "collided": self.collided, "collision_step": self.collision_step,
                "j_sim": self.j_sim, "n_smpc": c["SMPC"], "n_ft": c["FT"], "n_safe": c["SAFE"]}


def run_scenario(cfg: ScenarioConfig, seed: int = 0, check_invariant: bool = False) -> SimResult:
    pc = cfg.planner_config()
    road, dt = cfg.road, pc.dt
    rng = np.random.default_rng(seed)
    ev = np.asarray(cfg.ev_init, float)
    tvs = [np.asarray(t.init, float) for t in cfg.tvs]
    script = [_TvState(float(t.init[1]), lane_of(t.init[2], road)) for t in cfg.tvs]

    meas = [measure(t, rng, pc.tv) if cfg.noise.sensor else t.copy() for t in tvs]
    occ0 = build_world(ev, meas, pc).flat_occupancy()
    state = PlannerState(initial_safe_sequence(ev, dt, pc.ev, occ0, 0))

    trace, states, inputs, d_refs = [], [ev.copy()], [], []
    collided, col_step, col_tv, inv_ok = False, None, None, True
    for h in range(cfg.n_steps):
        if h > 0:
            meas = [measure(t, rng, pc.tv) if cfg.noise.sensor else t.copy() for t in tvs]
        if check_invariant and state.safe is not None and pc.mode != "smpc":
            if not check_carried_sequence(ev, state.safe, h, dt, pc.ev):
                inv_ok = False
        state.step = h
        dec = plan_step(ev, meas, state, pc)
        u = np.asarray(dec.applied, float)
        d_refs.append(road.center(lane_of(ev[1], road)))
        tv_u = _script_inputs(cfg.tvs, script, tvs, h, road, pc.tv)
        ev = step_plant(ev, u, dt, pc.ev)
        tvs = [tv_step_true(t, ui, rng, pc.tv, cfg.noise.tv_process) for t, ui in zip(tvs, tv_u)]
        state = PlannerState(dec.new_safe_sequence, u, dec.planned_smpc, h + 1)
        states.append(ev.copy())
        inputs.append(u)
        hit = [i for i, t in enumerate(tvs) if collision_check(ev, [t], road)]
        rec = {"h": h, "s": ev[0], "d": ev[1], "phi": ev[2], "v": ev[3], "a": u[0], "delta": u[1],
               "source": dec.source, "smpc_feasible": dec.smpc_feasible,
               "ft_feasible": dec.ft_feasible, "tvs": [t.copy() for t in tvs],
               "min_gap": min_gap(ev, tvs, road)}
        trace.append(rec)
        if hit:
            collided, col_step, col_tv = True, h, hit[0]
            break
    J = total_cost(states, inputs, d_refs, pc.v_ref, pc.weights)
    return SimResult(trace, collided, col_step, J, seed, np.asarray(states), np.asarray(inputs), inv_ok,
                     col_tv)


# ---------------------------------------------------------------- random scenarios

def random_scenario(rng: np.random.Generator, base: ScenarioConfig | None = None,
                    n_tvs: int = 5, max_tries: int = 10000) -> ScenarioConfig:
    """EV on a random lane at s=0, TVs with same-lane spacing and speed ordering."""
    base = base or ScenarioConfig()
    road = base.road
    lane_ev = int(rng.integers(road.n_lanes))
    for _ in range(max_tries):
        lanes = rng.integers(road.n_lanes, size=n_tvs)
        xs = rng.uniform(-100.0, 200.0, size=n_tvs)
        ok = True
        for l in range(road.n_lanes):
            pos = np.sort(np.append(xs[lanes == l], 0.0) if l == lane_ev else xs[lanes == l])
            if np.any(np.diff(pos) < 50.0):
                ok = False
                break
        if ok:
            break
    else:
        raise RuntimeError("could not place target vehicles")
    v_lo, v_hi = 20.0, 32.0
    vx = rng.uniform(v_lo, v_hi, size=n_tvs)
    v_ev = 27.0
    # followers are never faster than their leaders.  TVs do not react to the
    # EV, which may have to slow to the speed of any TV it must not pass, so
    # a TV starting behind it in its lane drives at the lowest TV speed
    for l in range(road.n_lanes):
        idx = np.flatnonzero(lanes == l)
        idx = idx[np.argsort(-xs[idx])]
        for a, b in zip(idx[:-1], idx[1:]):
            vx[b] = min(vx[b], vx[a])
        if l == lane_ev:
            for b in idx[xs[idx] < 0.0]:
                vx[b] = v_lo
    tvs = [TvSpec([float(xs[i]), float(vx[i]), road.center(int(lanes[i])), 0.0]) for i in range(n_tvs)]
    d0 = road.center(lane_ev)
    return ScenarioConfig(road=road, ev_init=[0.0, d0, 0.0, v_ev], ev_ref=[d0, 0.0, v_ev], tvs=tvs,
                          planner=base.planner, noise=base.noise, n_steps=base.n_steps)


# ---------------------------------------------------------------- output

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.9g}"


def write_trace(result: SimResult, path) -> None:
    path = Path(path)
    n_tv = len(result.trace[0]["tvs"]) if result.trace else 0
    head = ["h", "s", "d", "phi", "v", "a", "delta", "source", "smpc_feasible", "ft_feasible"]
    for i in range(n_tv):
        head += [f"tv{i}_x", f"tv{i}_vx", f"tv{i}_y", f"tv{i}_vy"]
    head.append("min_gap")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for r in result.trace:
            row = [r["h"]] + [_fmt(r[k]) for k in head[1:10]]
            for t in r["tvs"]:
                row += [_fmt(v) for v in t]
            row.append(_fmt(r["min_gap"]))
            w.writerow(row)


def write_summary(results, path) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.summary()) + "\n")
