"""Command-line front end.

Subcommands:

    run        one episode from a scenario file; prints the result as JSON
    batch      evaluate scenarios x trials and write a metrics report
    gen        generate seeded random scenario files
    gradcheck  audit analytic cost gradients against finite differences
    ablate     batch with a component disabled (--no-depth / --no-opt)

Exit codes: 0 success, 1 evaluation failures present, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from .grounding import GroundingConfig, RemoteGrounder
from .harness import (
    EmptyInputError,
    SchemaError,
    batch_eval,
    export_trajectory,
    gradient_audit,
    load_scenario,
    save_scenario,
)
from .pipeline import EpisodeAudit, NavigatorConfig, run_episode
from .simulator import ScenarioParams, UnsatisfiableError, gen_random_scenario

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_CONFIG = 2


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pixel-noise", type=float, default=3.0,
                        help="mock grounder pixel noise sigma in pixels")
    parser.add_argument("--depth-noise", type=float, default=0.02,
                        help="range-proportional depth noise factor")
    parser.add_argument("--grounding-period", type=float, default=2.0,
                        help="seconds between re-grounding queries")
    parser.add_argument("--latency", type=float, default=0.0,
                        help="modeled seconds per grounding query")
    parser.add_argument("--single-shot", action="store_true",
                        help="ground only once instead of re-grounding")
    parser.add_argument("--time-limit", type=float, default=120.0)
    parser.add_argument("--endpoint", default=os.environ.get("VLNAV_ENDPOINT"),
                        help="remote grounder URL (default: mock grounder)")
    parser.add_argument("--auth-token", default=os.environ.get("VLNAV_AUTH_TOKEN"))
    parser.add_argument("--timeout", type=float,
                        default=float(os.environ.get("VLNAV_TIMEOUT", "10.0")))


def _config_from_args(args, use_depth: bool = True, use_optimizer: bool = True) -> NavigatorConfig:
    return NavigatorConfig(
        grounding=GroundingConfig(
            period=args.grounding_period,
            pixel_noise_sigma=args.pixel_noise,
            latency_model=args.latency,
        ),
        depth_noise_eta=args.depth_noise,
        regrounding=not args.single_shot,
        time_limit=args.time_limit,
        use_depth=use_depth,
        use_optimizer=use_optimizer,
    )


def _grounder_from_args(args):
    if args.endpoint:
        return RemoteGrounder(args.endpoint, args.auth_token, args.timeout)
    return None  # mock grounder, built per episode


def _cmd_run(args) -> int:
    config = _config_from_args(args)
    scenario = load_scenario(args.scenario)
    audit = EpisodeAudit()
    result = run_episode(
        scenario,
        config,
        seed=args.seed,
        grounder=_grounder_from_args(args),
        audit=audit,
        trace_path=args.trace,
    )
    if args.export and audit.final_trajectory is not None:
        export_trajectory(audit.final_trajectory, 50.0, args.export)
    print(json.dumps(dataclasses.asdict(result), indent=2, sort_keys=True))
    return EXIT_OK if result.success else EXIT_FAILURES


def _load_scenarios(spec: list[str]):
    paths: list[Path] = []
    for item in spec:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.json")))
        else:
            paths.append(p)
    return [load_scenario(p) for p in paths]


def _cmd_batch(args, use_depth: bool = True, use_optimizer: bool = True) -> int:
    config = _config_from_args(args, use_depth=use_depth, use_optimizer=use_optimizer)
    scenarios = _load_scenarios(args.scenarios)
    factory = None
    if args.endpoint:
        remote = RemoteGrounder(args.endpoint, args.auth_token, args.timeout)

        def factory(scenario, seed):
            return remote
    t0 = time.perf_counter()
    report = batch_eval(
        scenarios,
        config,
        trials=args.trials,
        base_seed=args.base_seed,
        grounder_factory=factory,
    )
    wall = time.perf_counter() - t0
    payload = report.to_json()
    if args.report:
        Path(args.report).write_text(payload + "\n")
    else:
        print(payload)
    print(
        f"sr={report.sr:.2f}% ne_mean={report.ne_mean:.3f} m "
        f"time_mean={report.time_mean if report.time_mean is not None else 'n/a'} "
        f"(wall {wall:.1f}s)",
        file=sys.stderr,
    )
    return EXIT_OK if report.sr == 100.0 else EXIT_FAILURES


def _cmd_gen(args) -> int:
    params = ScenarioParams(
        world_size=args.world_size,
        n_obstacles=(args.obstacles_min, args.obstacles_max),
        min_clearance=args.min_clearance,
        min_separation=args.min_separation,
        delta=args.delta,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        scenario = gen_random_scenario(args.seed + i, params)
        save_scenario(scenario, out / f"scenario_{args.seed + i:04d}.json")
    print(f"wrote {args.count} scenarios to {out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    errors = gradient_audit(n_instances=args.instances, seed=args.seed)
    for name, err in sorted(errors.items()):
        print(f"{name:12s} max relative error {err:.3e}")
    worst = max(errors.values())
    print(f"worst: {worst:.3e} (tolerance 1e-4)")
    return EXIT_OK if worst < 1e-4 else EXIT_FAILURES


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vlnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single episode")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--trace", help="write a per-tick CSV trace here")
    p_run.add_argument("--export", help="write the final trajectory CSV here")
    _add_config_flags(p_run)

    p_batch = sub.add_parser("batch", help="evaluate scenarios x trials")
    p_batch.add_argument("--scenarios", nargs="+", required=True,
                         help="scenario files or directories of *.json")
    p_batch.add_argument("--trials", type=int, default=20)
    p_batch.add_argument("--base-seed", type=int, default=0)
    p_batch.add_argument("--report", help="write the JSON report here")
    _add_config_flags(p_batch)

    p_gen = sub.add_parser("gen", help="generate random scenarios")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--count", type=int, default=1)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--world-size", type=float, default=20.0)
    p_gen.add_argument("--obstacles-min", type=int, default=5)
    p_gen.add_argument("--obstacles-max", type=int, default=15)
    p_gen.add_argument("--min-clearance", type=float, default=1.0)
    p_gen.add_argument("--min-separation", type=float, default=8.0)
    p_gen.add_argument("--delta", type=float, default=5.0)

    p_grad = sub.add_parser("gradcheck", help="audit analytic gradients")
    p_grad.add_argument("--instances", type=int, default=100)
    p_grad.add_argument("--seed", type=int, default=0)

    p_abl = sub.add_parser("ablate", help="batch with a component disabled")
    p_abl.add_argument("--scenarios", nargs="+", required=True)
    p_abl.add_argument("--trials", type=int, default=20)
    p_abl.add_argument("--base-seed", type=int, default=0)
    p_abl.add_argument("--report", help="write the JSON report here")
    p_abl.add_argument("--no-depth", action="store_true",
                       help="replace depth lookup with a fixed-range guess")
    p_abl.add_argument("--no-opt", action="store_true",
                       help="fly the straight-line initialization unoptimized")
    _add_config_flags(p_abl)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK

    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "batch":
            return _cmd_batch(args)
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "ablate":
            return _cmd_batch(
                args, use_depth=not args.no_depth, use_optimizer=not args.no_opt
            )
    except (SchemaError, EmptyInputError, UnsatisfiableError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
