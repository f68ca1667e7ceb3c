import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import rectangles_overlap_sampled
from smpcft.ev_model import EvParams, RoadGeometry, step_plant
from smpcft.ocp import OcpWeights
from smpcft.sim import (ScenarioConfig, collision_check, load_scenario, random_scenario,
                        run_scenario, scenario_from_dict, total_cost, write_summary, write_trace)

ROAD = RoadGeometry()
W = OcpWeights()


# ---------------------------------------------------------------- collision

def test_collision_examples():
    assert collision_check([0, 0, 0, 27], [[0, 27, 0, 0]], ROAD)
    assert not collision_check([0, 0, 0, 27], [[100, 27, 0, 0]], ROAD)
    assert not collision_check([0, 0, 0, 27], [[5.0, 27, 0, 0]], ROAD)
    assert collision_check([0, 0, 0, 27], [[4.99, 27, 0, 0]], ROAD)


def _contact_radius(theta, phi):
    lo, hi = 0.0, 10.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        tv = [mid * np.cos(theta), 0.0, mid * np.sin(theta), 0.0]
        if collision_check([0.0, 0.0, phi, 0.0], [tv], ROAD):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_collision_matches_sampling_oracle_near_contact():
    rng = np.random.default_rng(12)
    for _ in range(100):
        phi = rng.choice([-0.1, 0.1])
        theta = rng.uniform(0, 2 * np.pi)
        r = _contact_radius(theta, phi)
        for dr, expect in ((-0.01, True), (0.01, False)):
            tv = [(r + dr) * np.cos(theta), 0.0, (r + dr) * np.sin(theta), 0.0]
            ev = [0.0, 0.0, phi, 0.0]
            assert collision_check(ev, [tv], ROAD) == expect
            assert rectangles_overlap_sampled(ev, tv, ROAD.l_veh, ROAD.w_veh) == expect


@given(st.floats(-8, 8), st.floats(-4, 4), st.floats(-0.3, 0.3))
def test_collision_symmetric_in_offset(dx, dy, phi):
    a = collision_check([0, 0, phi, 0], [[dx, 0, dy, 0]], ROAD)
    b = collision_check([0, 0, -phi, 0], [[dx, 0, -dy, 0]], ROAD)
    assert a == b


# ---------------------------------------------------------------- cost

def test_cost_examples():
    states = np.tile([0.0, 0.0, 0.0, 27.0], (4, 1))
    assert total_cost(states, np.zeros((3, 2)), [0, 0, 0], 27.0, W) == 0.0
    states = np.array([[0, 0, 0, 27.0], [5.4, 0, 0, 28.0]])
    assert total_cost(states, np.zeros((1, 2)), [0.0], 27.0, W) == pytest.approx(10.0)


@given(st.integers(1, 8))
def test_cost_invariant_under_zero_cost_steps(extra):
    rng = np.random.default_rng(extra)
    states = np.column_stack([np.arange(6.0), rng.normal(size=6), rng.normal(size=6) * 0.01,
                              27 + rng.normal(size=6)])
    inputs = np.vstack([rng.normal(size=(4, 2)), np.zeros((1, 2))])
    J = total_cost(states, inputs, [0.0] * 5, 27.0, W)
    more = np.vstack([states, np.tile([10.0, 0.0, 0.0, 27.0], (extra, 1))])
    # the appended states are on reference but the first one is measured against the last state
    more_inputs = np.vstack([inputs, np.zeros((extra, 2))])
    refs = [0.0] * (5 + extra)
    J2 = total_cost(more, more_inputs, refs, 27.0, W)
    assert J2 == pytest.approx(J)


# ---------------------------------------------------------------- random scenarios

def test_random_scenarios_respect_rules():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        cfg = random_scenario(rng)
        d0 = cfg.ev_init[1]
        assert d0 in (0.0, 3.5, 7.0) and cfg.ev_init[0] == 0 and cfg.ev_init[3] == 27.0
        lanes = {}
        for t in cfg.tvs:
            x, vx, y, vy = t.init
            assert -100 <= x <= 200 and 20 <= vx <= 32 and vy == 0
            lanes.setdefault(y, []).append((x, vx))
        lanes.setdefault(d0, []).append((0.0, 27.0))
        for members in lanes.values():
            members.sort()
            xs = [m[0] for m in members]
            assert np.all(np.diff(xs) >= 50)
            tvs = [m for m in members if m != (0.0, 27.0)]
            vs = [m[1] for m in sorted(tvs)]
            # followers never faster than leaders
            assert all(a <= b + 1e-12 for a, b in zip(vs[:-1], vs[1:]))


def test_random_scenario_deterministic():
    a = random_scenario(np.random.default_rng(5))
    b = random_scenario(np.random.default_rng(5))
    assert [t.init for t in a.tvs] == [t.init for t in b.tvs] and a.ev_init == b.ev_init


# ---------------------------------------------------------------- runs

@pytest.fixture(scope="module")
def short_run():
    cfg = ScenarioConfig(n_steps=30)
    return cfg, run_scenario(cfg, seed=3, check_invariant=True)


def test_run_determinism(short_run):
    cfg, r = short_run
    r2 = run_scenario(cfg, seed=3)
    assert np.array_equal(r.states, r2.states) and r.j_sim == r2.j_sim


def test_trace_consistency(short_run):
    cfg, r = short_run
    ep = cfg.planner_config().ev
    x = r.states[0]
    for k, u in enumerate(r.inputs):
        x = step_plant(x, u, cfg.planner.dt, ep)
        assert np.max(np.abs(x - r.states[k + 1])) <= 1e-9
        rec = r.trace[k]
        assert np.allclose([rec["s"], rec["d"], rec["phi"], rec["v"]], r.states[k + 1], atol=1e-12)


def test_no_teleport(short_run):
    cfg, r = short_run
    p = EvParams()
    dt = cfg.planner.dt
    bound = p.v_max * dt + 0.5 * p.u_max[0] * dt**2
    step = np.hypot(*np.diff(r.states[:, :2], axis=0).T)
    assert np.all(step <= bound + 1e-9)


def test_short_run_invariant(short_run):
    _, r = short_run
    assert r.invariant_ok and not r.collided and len(r.trace) == 30


def test_ft_mode_never_smpc():
    cfg = ScenarioConfig(n_steps=10)
    cfg.planner.mode = "ft"
    r = run_scenario(cfg, seed=0)
    assert all(rec["source"] != "SMPC" for rec in r.trace)


# ---------------------------------------------------------------- files

def test_loader_rejects_unknown_keys(tmp_path):
    with pytest.raises(ValueError):
        scenario_from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        scenario_from_dict({"planner": {"mode": "smpcft", "betta": 0.8}})
    with pytest.raises(ValueError):
        scenario_from_dict({"tvs": [{"init": [0, 20, 0, 0], "scrip": []}]})
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"n_steps": 5, "planner": {"beta": 0.9}}))
    cfg = load_scenario(p)
    assert cfg.n_steps == 5 and cfg.planner.beta == 0.9


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(n_steps=0)
    with pytest.raises(ValueError):
        ScenarioConfig(ev_init=[0, 0, 0])


def test_trace_and_summary_files(tmp_path, short_run):
    _, r = short_run
    write_trace(r, tmp_path / "trace.csv")
    rows = list(csv.reader(open(tmp_path / "trace.csv")))
    head = rows[0]
    assert head[:10] == ["h", "s", "d", "phi", "v", "a", "delta", "source", "smpc_feasible",
                         "ft_feasible"]
    assert head[10:14] == ["tv0_x", "tv0_vx", "tv0_y", "tv0_vy"] and head[-1] == "min_gap"
    assert len(rows) == len(r.trace) + 1
    write_summary([r], tmp_path / "summary.jsonl")
    rec = json.loads(open(tmp_path / "summary.jsonl").readline())
    assert set(rec) == {"seed", "collided", "collision_step", "j_sim", "n_smpc", "n_ft", "n_safe"}
