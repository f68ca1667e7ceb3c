"""Command line entry: single runs, random batches and the property self-test."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .sim import MODES, ScenarioConfig, load_scenario, random_scenario, run_scenario, write_summary, write_trace

EXIT_OK, EXIT_ERROR, EXIT_COLLISION = 0, 1, 2


def builtin_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package ("regular" or "emergency")."""
    return Path(str(resources.files("smpcft") / "scenarios" / f"{name}.json"))


def _scenario_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    p = builtin_scenario(arg)
    if p.exists():
        return p
    raise FileNotFoundError(f"scenario not found: {arg}")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smpcft", description="SMPC+FT highway planner simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("--scenario", required=True, help="scenario file, or 'regular' / 'emergency'")
    run.add_argument("--mode", choices=MODES, default=None)
    run.add_argument("--beta", type=float, default=None)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default=None, help="directory for trace.csv and summary.jsonl")

    batch = sub.add_parser("batch", help="simulate random scenarios")
    batch.add_argument("--count", type=int, required=True)
    batch.add_argument("--seed", type=int, default=0)
    batch.add_argument("--out", default=None)
    batch.add_argument("--check-invariant", action="store_true",
                       help="validate the carried safe sequence at every step")

    sub.add_parser("selftest", help="run the property test suites")
    return ap


def _cmd_run(args) -> int:
    cfg = load_scenario(_scenario_path(args.scenario))
    planner = cfg.planner
    if args.mode is not None:
        planner = replace(planner, mode=args.mode)
    if args.beta is not None:
        planner = replace(planner, beta=args.beta)
    cfg = replace(cfg, planner=planner)
    res = run_scenario(cfg, args.seed)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_trace(res, out / "trace.csv")
        write_summary([res], out / "summary.jsonl")
    print(json.dumps(res.summary()))
    return EXIT_COLLISION if res.collided else EXIT_OK


def _cmd_batch(args) -> int:
    if args.count < 1:
        raise ValueError("count must be positive")
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    # one child seed per run so each run is reproducible on its own
    seeds = np.random.SeedSequence(args.seed).spawn(args.count)
    base = ScenarioConfig()
    results, any_hit, inv_ok = [], False, True
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        cfg = random_scenario(rng, base)
        run_seed = int(ss.generate_state(1)[0])
        res = run_scenario(cfg, run_seed, check_invariant=args.check_invariant)
        results.append(res)
        any_hit |= res.collided
        inv_ok &= res.invariant_ok
        if out:
            write_trace(res, out / f"trace_{i:04d}.csv")
        print(json.dumps({"run": i, **res.summary(), "invariant_ok": res.invariant_ok}), flush=True)
    if out:
        write_summary(results, out / "summary.jsonl")
    if args.check_invariant and not inv_ok:
        print("recursive-feasibility invariant violated", file=sys.stderr)
    return EXIT_COLLISION if any_hit else EXIT_OK


def _cmd_selftest(args) -> int:
    try:
        import pytest
    except ImportError:
        print("selftest needs pytest (pip install smpcft[test])", file=sys.stderr)
        return EXIT_ERROR
    tests = Path(__file__).resolve().parents[2] / "tests"
    if not tests.is_dir():
        print(f"test suite not found at {tests}", file=sys.stderr)
        return EXIT_ERROR
    code = pytest.main([str(tests), "-q", "-k", "not acceptance"])
    return EXIT_OK if code == 0 else EXIT_ERROR


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_ERROR
    try:
        return {"run": _cmd_run, "batch": _cmd_batch, "selftest": _cmd_selftest}[args.cmd](args)
    except (ValueError, TypeError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
