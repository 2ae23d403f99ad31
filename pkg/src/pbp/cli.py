"""Command-line entry points: plan, evaluate, sweep, selftest.

All outputs land in a run directory with the config copied alongside.
The PBP_SEED environment variable overrides the config seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .harness import (
    ExperimentConfig,
    build_env,
    build_planning_side,
    run_experiment,
    solve_hsvi,
    sweep_noise,
    write_csv,
)
from .hsvi import export_trace_csv


def _load_config(path: str) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(Path(path).read_text())
    seed_override = os.environ.get("PBP_SEED")
    if seed_override is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=int(seed_override))
    return cfg


def _prepare_out(cfg: ExperimentConfig, out: str) -> Path:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(cfg.to_json())
    return out_dir


def cmd_plan(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _prepare_out(cfg, args.out)
    env = build_env(cfg)
    pm = build_planning_side(env)
    if cfg.algo == "tpbp-pomcp":
        print("tpbp-pomcp plans online per step; exporting the planning model only")
        pm.save(out_dir / "planning_model.json")
        return 0
    result = solve_hsvi(cfg, env, pm, use_cache=False)
    (out_dir / "policy.json").write_text(json.dumps(result.policy.to_dict()))
    export_trace_csv(result.trace, out_dir / "bounds.csv")
    pm.save(out_dir / "planning_model.json")
    print(f"lower(b0)={result.lower_value:.6f} upper(b0)={result.upper_value:.6f} iters={result.iterations}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _prepare_out(cfg, args.out)
    record = run_experiment(cfg)
    write_csv([record], out_dir / "results.csv")
    print(f"V={record.v_mean:.4f} +/- {record.ci95:.4f} over {len(record.returns)} episodes")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _prepare_out(cfg, args.out)
    probabilities = [float(x) for x in args.probabilities.split(",")]
    modes = args.modes.split(",") if args.modes else None
    records = sweep_noise(cfg, probabilities, modes)
    write_csv(records, out_dir / "sweep.csv")
    for r in records:
        c = r.config
        print(f"{c.noise_mode:>8} p={c.noise_p:<5} V={r.v_mean:.4f} +/- {r.ci95:.4f}")
    return 0


def cmd_selftest(args) -> int:
    from . import selftest

    return selftest.run()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="pbp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="solve and export policy + bound trace")
    p_plan.add_argument("--config", required=True)
    p_plan.add_argument("--out", required=True)
    p_plan.set_defaults(fn=cmd_plan)

    p_eval = sub.add_parser("evaluate", help="run episodes and write a results CSV")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(fn=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="noise-probability grid")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--probabilities", default="0,0.25,0.5,0.75,1.0")
    p_sweep.add_argument("--modes", default=None, help="comma list: additive,pure")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_self = sub.add_parser("selftest", help="run the built-in property suites")
    p_self.set_defaults(fn=cmd_selftest)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
