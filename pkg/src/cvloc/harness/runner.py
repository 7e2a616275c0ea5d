"""Config parsing, single-run localization, and batch evaluation."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..cvls import MAGIC, load_scene
from ..errors import ConfigError, DegenerateProblemError
from ..geometry import Pose3
from ..losses import LossConfig, total_loss
from ..metrics import MetricsSummary, PoseError, pose_error, summarize
from ..problem import AlignmentProblem
from ..solver import LMConfig, RobustCost, refine_pose
from ..synth import PerturbBounds, SynthConfig, generate_scene, sample_initial_pose

_TRIAL_CSV_COLUMNS = [
    "trial", "seed",
    "init_lateral_m", "init_longitudinal_m", "init_yaw_deg",
    "final_lateral_m", "final_longitudinal_m", "final_yaw_deg",
    "err_lateral_m", "err_longitudinal_m", "err_yaw_deg",
    "converged", "iterations", "status",
]

_SWEEP_CSV_COLUMNS = [
    "max_shift_m", "max_yaw_deg",
    "median_lateral_m", "median_longitudinal_m", "median_yaw_deg",
    "recall_lateral_0.25m", "recall_lateral_0.5m", "recall_lateral_1m",
    "recall_lateral_2m",
    "recall_longitudinal_0.25m", "recall_longitudinal_0.5m",
    "recall_longitudinal_1m", "recall_longitudinal_2m",
    "recall_yaw_1deg", "recall_yaw_2deg", "recall_yaw_4deg",
    "trials", "failures",
]


@dataclass(frozen=True)
class RunConfig:
    solver: LMConfig
    cost: RobustCost
    loss: LossConfig
    synth: SynthConfig


def _build_section(name: str, data: dict, builder):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    try:
        return builder(data)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def _cost_from(data: dict) -> RobustCost:
    kind = data.get("kind", "huber")
    extra = set(data) - {"kind", "delta", "sigma"}
    if extra:
        raise ConfigError(f"unknown cost keys {sorted(extra)}")
    if kind == "squared":
        return RobustCost.squared()
    if kind == "huber":
        return RobustCost.huber(delta=float(data.get("delta", 0.25)))
    if kind == "geman_mcclure":
        return RobustCost.geman_mcclure(sigma=float(data.get("sigma", 1.0)))
    raise ConfigError(f"unknown cost kind {kind!r}")


def _solver_from(data: dict) -> LMConfig:
    allowed = {"max_iters_per_level", "stop_tol", "lambda_init", "lambda_up",
               "lambda_down", "level_order"}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"unknown solver keys {sorted(extra)}")
    return LMConfig(**data)


def _loss_from(data: dict) -> LossConfig:
    allowed = {"alpha", "beta_lo", "beta_hi", "dis_level"}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"unknown loss keys {sorted(extra)}")
    return LossConfig(**data)


def _synth_from(data: dict) -> SynthConfig:
    data = dict(data)
    gt = data.pop("gt_pose", None)
    allowed = {"seed", "sat_size", "gamma", "levels", "channels", "point_count",
               "depth_min", "depth_max", "feature_smoothness", "attention_mode",
               "grd_width", "grd_height", "grd_focal", "cam_height_m"}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"unknown synth keys {sorted(extra)}")
    kwargs = dict(data)
    if "depth_min" in kwargs or "depth_max" in kwargs:
        lo = kwargs.pop("depth_min", 3.0)
        hi = kwargs.pop("depth_max", 25.0)
        kwargs["point_depth_range"] = (float(lo), float(hi))
    if gt is not None:
        if not isinstance(gt, dict):
            raise ConfigError("synth.gt_pose must be an object")
        kwargs["gt_pose"] = Pose3(
            float(gt.get("lateral_m", 0.0)),
            float(gt.get("longitudinal_m", 0.0)),
            math.radians(float(gt.get("yaw_deg", 0.0))))
    return SynthConfig(**kwargs)


def load_config(path=None) -> RunConfig:
    """Parse a JSON config file; missing sections fall back to defaults.

    Schema (all sections optional): ``solver`` (LM schedule), ``cost``
    (robust cost), ``loss`` (triplet/gating), ``synth`` (scene defaults).
    Angles are degrees.
    """
    data = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
    extra = set(data) - {"solver", "cost", "loss", "synth"}
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")

    try:
        return RunConfig(
            solver=_build_section("solver", data.get("solver", {}), _solver_from),
            cost=_build_section("cost", data.get("cost", {}), _cost_from),
            loss=_build_section("loss", data.get("loss", {}), _loss_from),
            synth=_build_section("synth", data.get("synth", {}), _synth_from),
        )
    except ConfigError:
        raise
    except Exception as exc:  # invalid values surface as ConfigError
        raise ConfigError(str(exc)) from exc


def load_problem(source) -> AlignmentProblem:
    """Load a CVLS scene file, or generate one from a synth config file."""
    path = Path(source)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return load_scene(path)
    cfg = load_config(path)
    return generate_scene(cfg.synth)


def resolve_workers(cli_value=None) -> int:
    """Worker count: CVL_WORKERS env var wins over the CLI flag."""
    env = os.environ.get("CVL_WORKERS")
    if env is not None:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"CVL_WORKERS must be an integer, got {env!r}") from exc
    else:
        n = cli_value if cli_value is not None else 1
    if n < 1:
        raise ConfigError(f"worker count must be >= 1, got {n}")
    return n


def parse_init_pose(text: str) -> Pose3:
    """Parse "lateral_m,longitudinal_m,yaw_deg"."""
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--init expects 'lat_m,lon_m,yaw_deg', got {text!r}")
    try:
        lat, lon, yaw_deg = (float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"--init has a non-numeric field: {text!r}") from exc
    return Pose3(lat, lon, math.radians(yaw_deg))


def _pose_json(pose: Pose3) -> dict:
    return {"lateral_m": pose.lateral, "longitudinal_m": pose.longitudinal,
            "yaw_deg": math.degrees(pose.yaw)}


def run_localize(scene_path, init_pose: Pose3 | None = None,
                 perturb_seed: int | None = None,
                 bounds: PerturbBounds | None = None,
                 config: RunConfig | None = None) -> dict:
    """Localize one scene and return the full machine-readable run record.

    The initial pose is either given explicitly or sampled from the scene's
    true pose under ``bounds`` with ``perturb_seed``.
    """
    config = config or load_config(None)
    problem = load_scene(scene_path)
    if init_pose is None:
        if perturb_seed is None:
            raise ConfigError("need either an explicit init pose or a perturb seed")
        init_pose = sample_initial_pose(problem.gt_pose, bounds or PerturbBounds(),
                                        perturb_seed)

    start = time.perf_counter()
    report = refine_pose(problem, init_pose, config.solver, config.cost)
    wall = time.perf_counter() - start

    err = pose_error(report.final_pose, problem.gt_pose)
    _, loss_parts = total_loss(problem, report.final_pose, init_pose,
                               problem.gt_pose, config.cost, config.loss)
    return {
        "scene": str(scene_path),
        "init_pose": _pose_json(init_pose),
        "gt_pose": _pose_json(problem.gt_pose),
        "final_pose": _pose_json(report.final_pose),
        "error": {"lateral_m": err.lateral_err, "longitudinal_m": err.longitudinal_err,
                  "yaw_deg": err.yaw_err_deg},
        "converged": report.converged,
        "iterations_total": report.iterations_total,
        "loss": loss_parts,
        "trace": report.to_dict()["levels"],
        "wall_time_s": wall,
    }


def _eval_trial(problem: AlignmentProblem, trial: int, master_seed: int,
                bounds: PerturbBounds, config: RunConfig) -> dict:
    seed = int(np.random.SeedSequence((master_seed, trial)).generate_state(1)[0])
    init = sample_initial_pose(problem.gt_pose, bounds, seed)
    row = {
        "trial": trial,
        "seed": seed,
        "init_lateral_m": init.lateral,
        "init_longitudinal_m": init.longitudinal,
        "init_yaw_deg": math.degrees(init.yaw),
    }
    try:
        report = refine_pose(problem, init, config.solver, config.cost)
    except DegenerateProblemError as exc:
        row.update({
            "final_lateral_m": "", "final_longitudinal_m": "", "final_yaw_deg": "",
            "err_lateral_m": "", "err_longitudinal_m": "", "err_yaw_deg": "",
            "converged": "", "iterations": "", "status": f"degenerate: {exc}",
        })
        return row
    err = pose_error(report.final_pose, problem.gt_pose)
    row.update({
        "final_lateral_m": report.final_pose.lateral,
        "final_longitudinal_m": report.final_pose.longitudinal,
        "final_yaw_deg": math.degrees(report.final_pose.yaw),
        "err_lateral_m": err.lateral_err,
        "err_longitudinal_m": err.longitudinal_err,
        "err_yaw_deg": err.yaw_err_deg,
        "converged": report.converged,
        "iterations": report.iterations_total,
        "status": "ok",
    })
    return row


def run_eval(problem: AlignmentProblem, trials: int, bounds: PerturbBounds,
             workers: int = 1, master_seed: int = 0,
             config: RunConfig | None = None) -> tuple[MetricsSummary, list, int]:
    """Seeded trial fan-out over one scene.

    Returns (summary, per-trial rows, failure count). Trial seeds depend
    only on (master_seed, trial index), so the aggregate is identical for
    any worker count.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    config = config or load_config(None)

    if workers == 1:
        rows = [_eval_trial(problem, t, master_seed, bounds, config)
                for t in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(
                lambda t: _eval_trial(problem, t, master_seed, bounds, config),
                range(trials)))

    errors = []
    failures = 0
    for row in rows:
        if row["status"] == "ok":
            errors.append(PoseError(row["err_lateral_m"], row["err_longitudinal_m"],
                                    row["err_yaw_deg"]))
        else:
            failures += 1
    summary = summarize(errors, trial_count=trials)
    return summary, rows, failures


def write_trials_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_TRIAL_CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_eval_summary(path, summary: MetricsSummary, failures: int,
                       bounds: PerturbBounds, master_seed: int) -> None:
    payload = summary.to_dict()
    payload["failures"] = failures
    payload["bounds"] = {"max_shift_m": bounds.max_shift,
                         "max_yaw_deg": bounds.max_yaw_deg}
    payload["master_seed"] = master_seed
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sweep_csv(path, sweep_rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SWEEP_CSV_COLUMNS)
        for row in sweep_rows:
            s = row.summary
            writer.writerow([
                row.bounds.max_shift, row.bounds.max_yaw_deg,
                s.median_lateral, s.median_longitudinal, s.median_yaw_deg,
                *[s.recall_lateral[t] for t in (0.25, 0.5, 1.0, 2.0)],
                *[s.recall_longitudinal[t] for t in (0.25, 0.5, 1.0, 2.0)],
                *[s.recall_yaw[t] for t in (1.0, 2.0, 4.0)],
                row.trials, row.failures,
            ])
