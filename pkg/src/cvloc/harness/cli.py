"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 degenerate problem, 5 numeric self-check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from ..cvls import save_scene
from ..errors import ConfigError, DegenerateProblemError, FormatError, GenerationError
from ..synth import PerturbBounds, generate_scene, perturbation_sweep
from . import runner
from .checks import check_numerics

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DEGENERATE = 4
EXIT_CHECK_FAILED = 5


def _cmd_localize(args) -> int:
    config = runner.load_config(args.config)
    if args.init is not None:
        record = runner.run_localize(args.scene,
                                     init_pose=runner.parse_init_pose(args.init),
                                     config=config)
    else:
        bounds = PerturbBounds(max_shift=args.max_shift, max_yaw_deg=args.max_yaw)
        record = runner.run_localize(args.scene, perturb_seed=args.perturb_seed,
                                     bounds=bounds, config=config)
    text = json.dumps(record, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def _cmd_synth(args) -> int:
    config = runner.load_config(args.config)
    cfg = config.synth
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    problem = generate_scene(cfg)
    save_scene(args.out, problem)
    print(f"wrote scene with {problem.points.count} points to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = runner.load_config(args.config)
    problem = runner.load_problem(args.scene)
    workers = runner.resolve_workers(args.workers)
    bounds = PerturbBounds(max_shift=args.max_shift, max_yaw_deg=args.max_yaw)
    summary, rows, failures = runner.run_eval(problem, args.trials, bounds,
                                              workers=workers,
                                              master_seed=args.seed, config=config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runner.write_trials_csv(out_dir / "trials.csv", rows)
    runner.write_eval_summary(out_dir / "summary.json", summary, failures,
                              bounds, args.seed)
    print(f"{args.trials} trials ({failures} failures) -> {out_dir}")
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _parse_bounds(text: str) -> list[PerturbBounds]:
    out = []
    for piece in text.split(","):
        parts = piece.split(":")
        if len(parts) != 2:
            raise ConfigError(f"--bounds expects 'shift:yaw,...', got {piece!r}")
        try:
            out.append(PerturbBounds(max_shift=float(parts[0]),
                                     max_yaw_deg=float(parts[1])))
        except ValueError as exc:
            raise ConfigError(f"bad bound {piece!r}: {exc}") from exc
    if not out:
        raise ConfigError("--bounds is empty")
    return out


def _cmd_sweep(args) -> int:
    config = runner.load_config(args.config)
    problem = runner.load_problem(args.scene)
    grid = _parse_bounds(args.bounds)
    rows = perturbation_sweep(problem, grid, args.trials, args.seed,
                              cfg=config.solver, cost=config.cost)
    runner.write_sweep_csv(args.out, rows)
    print(f"swept {len(grid)} bounds x {args.trials} trials -> {args.out}")
    return EXIT_OK


def _cmd_check_numerics(args) -> int:
    report = check_numerics(seed=args.seed)
    print(report.as_text())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvloc",
        description="Cross-view vehicle localization against satellite feature maps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("localize", help="refine one scene's pose and emit a JSON record")
    p.add_argument("--scene", required=True, help="CVLS scene file")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--init", help="initial pose 'lat_m,lon_m,yaw_deg'")
    group.add_argument("--perturb-seed", type=int, dest="perturb_seed",
                       help="sample the initial pose from the true pose")
    p.add_argument("--max-shift", type=float, default=10.0,
                   help="perturbation shift bound in meters (with --perturb-seed)")
    p.add_argument("--max-yaw", type=float, default=30.0,
                   help="perturbation yaw bound in degrees (with --perturb-seed)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="output JSON path (stdout if omitted)")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("synth", help="generate a synthetic scene file")
    p.add_argument("--config", help="JSON config file (synth section)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output CVLS path")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("eval", help="batch evaluation over seeded perturbations")
    p.add_argument("--scene", required=True,
                   help="CVLS scene file or JSON synth config")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--max-shift", type=float, default=10.0)
    p.add_argument("--max-yaw", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0, help="master seed for trial fan-out")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel trials (CVL_WORKERS env overrides)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="robustness sweep over perturbation bounds")
    p.add_argument("--scene", required=True,
                   help="CVLS scene file or JSON synth config")
    p.add_argument("--bounds", required=True,
                   help="comma list of shift_m:yaw_deg, e.g. '5:15,10:30,20:60'")
    p.add_argument("--trials", type=int, required=True, help="trials per bound")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("check-numerics", help="run the numeric self-check battery")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_check_numerics)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GenerationError as exc:
        print(f"scene generation error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except DegenerateProblemError as exc:
        print(f"degenerate problem: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
