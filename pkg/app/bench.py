"""
Problem-document loading, the independent metric evaluator and the benchmark
runner that writes metrics.csv and summary.json.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import ValidationError

from .config import MotionGenConfig, apply_overrides, data_dir, load_config
from .data_structures import IK_COLUMNS, METRIC_COLUMNS, MetricsRow, Trajectory
from .exceptions import DocumentNotFoundError, MotionGenError, ProblemError
from .geometric_planner import plan
from .logger_service import LoggerService
from .models import Pose, RobotModel, WorldModel
from .motion_gen import plan_motion, solve_ik_detailed
from .robot_model import forward_kinematics, load_robot
from .schemas import NOT_AVAILABLE, ProblemDocument, ProblemSetDocument, ReportDocument
from .utils import nearest_rank_percentile
from .validations import trajectory_metrics, validate_trajectory
from .world_geometry import load_scene

logger = LoggerService(__name__)

BENCH_MODES = ("full", "ik", "plan", "opt")
PLAN_COLUMNS = ("success", "c_space_path_length", "compute_time")
AGGREGATES = (("mean", None), ("p75", 75.0), ("p98", 98.0))
METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"


@dataclass
class LoadedProblem:
    id: str
    robot: RobotModel
    world: WorldModel
    start: np.ndarray
    goal: Union[Pose, np.ndarray]
    config: MotionGenConfig


def resolve_reference(reference: str, base_dir: Optional[Path], kind: str) -> Path:
    """A document path relative to the referring document, else a bundled document name."""
    candidates = [Path(reference)]
    if base_dir is not None:
        candidates.append(Path(base_dir) / reference)
    bundled = data_dir() / kind
    candidates += [bundled / reference, bundled / f"{reference}.json"]
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    raise DocumentNotFoundError(f"Cannot resolve {kind[:-1]} reference '{reference}'")


def _read_document(model, path: Path):
    try:
        return model.model_validate_json(Path(path).read_text())
    except ValidationError as e:
        raise ProblemError(f"Malformed document {path}: {e}")
    except OSError as e:
        raise DocumentNotFoundError(f"Cannot read document {path}: {e}")


def build_problem(document: ProblemDocument, robot: RobotModel, world: WorldModel,
                  config: MotionGenConfig) -> LoadedProblem:
    start = np.asarray(document.start_q, dtype=np.float64)
    if start.shape != (robot.dof,):
        raise ProblemError(f"start_q has {start.shape[0]} values, robot has {robot.dof} joints")
    if document.goal_pose is not None:
        try:
            goal = Pose.from_list(document.goal_pose)
        except ValueError as e:
            raise ProblemError(f"goal_pose: {e}") from e
    else:
        goal_q = np.asarray(document.goal_q, dtype=np.float64)
        if goal_q.shape != (robot.dof,):
            raise ProblemError(f"goal_q has {goal_q.shape[0]} values, robot has {robot.dof} joints")
        goal = goal_q if document.mode == "cspace_goal" else forward_kinematics(robot, goal_q).ee_pose(0)
    config = apply_overrides(config, document.overrides)
    return LoadedProblem(document.id or "problem", robot, world, start, goal, config)


def load_problem(source: Union[str, Path, ProblemDocument], config: Optional[MotionGenConfig] = None,
                 base_dir: Optional[Path] = None) -> LoadedProblem:
    if isinstance(source, ProblemDocument):
        document = source
    else:
        document = _read_document(ProblemDocument, Path(source))
        base_dir = Path(source).parent
    if document.robot_config is None:
        raise ProblemError("Problem document needs a robot_config reference")
    robot = load_robot(resolve_reference(document.robot_config, base_dir, "robots"))
    world = load_scene(resolve_reference(document.scene, base_dir, "scenes")) if document.scene else WorldModel()
    return build_problem(document, robot, world, config or load_config())


def load_problem_set(source: Union[str, Path, ProblemSetDocument], config: Optional[MotionGenConfig] = None,
                     base_dir: Optional[Path] = None) -> List[LoadedProblem]:
    if isinstance(source, ProblemSetDocument):
        document = source
    else:
        document = _read_document(ProblemSetDocument, Path(source))
        base_dir = Path(source).parent
    config = config or load_config()
    robot = load_robot(resolve_reference(document.robot_config, base_dir, "robots"))
    scenes = {}
    problems = []
    for entry in document.problems:
        scene = entry.scene or document.scene
        if scene not in scenes:
            scenes[scene] = load_scene(resolve_reference(scene, base_dir, "scenes")) if scene else WorldModel()
        try:
            problem_document = ProblemDocument(id=entry.id, start_q=entry.start_q, goal_pose=entry.goal_pose,
                                               goal_q=entry.goal_q, mode=entry.mode)
        except ValidationError as e:
            raise ProblemError(f"Problem '{entry.id}': {e}") from e
        problems.append(build_problem(problem_document, robot, scenes[scene], config))
    return problems


def evaluate_trajectory(trajectory: Trajectory, robot: RobotModel, world: WorldModel,
                        goal: Union[Pose, np.ndarray, None], config: Optional[MotionGenConfig] = None,
                        problem_id: str = "") -> MetricsRow:
    """Metrics and success recomputed from the raw positions and dt only."""
    config = config or MotionGenConfig()
    positions, dt = np.asarray(trajectory.positions), trajectory.dt
    report = validate_trajectory(positions, dt, robot, world, goal, config.position_threshold,
                                 config.rotation_threshold, config.limit_tolerance)
    return MetricsRow(
        id=problem_id,
        success=report.ok,
        position_error=report.position_error,
        orientation_error=report.orientation_error,
        **trajectory_metrics(positions, dt),
    )


def _goal_pose(problem: LoadedProblem) -> Pose:
    if isinstance(problem.goal, Pose):
        return problem.goal
    return forward_kinematics(problem.robot, problem.goal).ee_pose(0)


def _run_full(problem: LoadedProblem, seed_modes=None) -> MetricsRow:
    clock = time.perf_counter()
    result = plan_motion(problem.robot, problem.world, problem.start, problem.goal, problem.config,
                         seed_modes=seed_modes)
    elapsed = time.perf_counter() - clock
    if result.trajectory is None:
        return MetricsRow(id=problem.id, failure_reason=result.failure_reason, compute_time=elapsed)
    row = evaluate_trajectory(result.trajectory, problem.robot, problem.world, problem.goal, problem.config,
                              problem.id)
    row.success = row.success and result.success
    row.compute_time = elapsed
    return row


def _run_ik(problem: LoadedProblem) -> MetricsRow:
    clock = time.perf_counter()
    solutions = solve_ik_detailed(problem.robot, problem.world, _goal_pose(problem), problem.config.ik_seeds,
                                  problem.config)
    elapsed = time.perf_counter() - clock
    if not solutions:
        return MetricsRow(id=problem.id, failure_reason="no_ik", compute_time=elapsed)
    best = min(solutions, key=lambda s: s.position_error)
    return MetricsRow(id=problem.id, success=True, position_error=best.position_error,
                      orientation_error=best.orientation_error, compute_time=elapsed)


def _run_plan(problem: LoadedProblem) -> MetricsRow:
    clock = time.perf_counter()
    if isinstance(problem.goal, Pose):
        solutions = solve_ik_detailed(problem.robot, problem.world, problem.goal, problem.config.ik_seeds,
                                      problem.config, current=problem.start)
        if not solutions:
            return MetricsRow(id=problem.id, failure_reason="no_ik", compute_time=time.perf_counter() - clock)
        goal_q = solutions[0].q
    else:
        goal_q = problem.goal
    result = plan(problem.robot, problem.world, problem.start[None], goal_q[None],
                  replace(problem.config.planner, seed=problem.config.planner.seed + problem.config.seed))[0]
    elapsed = time.perf_counter() - clock
    if not result.found:
        return MetricsRow(id=problem.id, failure_reason="planner_failed", compute_time=elapsed)
    return MetricsRow(id=problem.id, success=True, compute_time=elapsed,
                      c_space_path_length=float(np.sum(np.abs(np.diff(result.path, axis=0)))))


def run_problem(problem: LoadedProblem, mode: str = "full") -> MetricsRow:
    try:
        if mode == "ik":
            return _run_ik(problem)
        if mode == "plan":
            return _run_plan(problem)
        if mode == "opt":
            return _run_full(problem, seed_modes=("linear",))
        return _run_full(problem)
    except MotionGenError as e:
        logger.error(f"[BENCH] problem {problem.id} failed: {e}")
        return MetricsRow(id=problem.id, error=str(e))


def columns_for(mode: str):
    if mode == "ik":
        return IK_COLUMNS
    if mode == "plan":
        return PLAN_COLUMNS
    return METRIC_COLUMNS


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def aggregate(rows: List[MetricsRow], columns) -> ReportDocument:
    """Success rate plus mean and nearest-rank percentiles per metric column."""
    report = ReportDocument(problems=len(rows))
    if rows:
        report.success_percent = 100.0 * sum(r.success for r in rows) / len(rows)
    for column in columns:
        if column == "success":
            continue
        values = [getattr(r, column) for r in rows if getattr(r, column) is not None]
        summary = {}
        for name, percent in AGGREGATES:
            if not values:
                summary[name] = NOT_AVAILABLE
            elif percent is None:
                summary[name] = float(np.mean(values))
            else:
                summary[name] = nearest_rank_percentile(values, percent)
        report.aggregates[column] = summary
    return report


def write_report(rows: List[MetricsRow], report: ReportDocument, output_dir: Union[str, Path], columns):
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    header = ["id", *columns, "failure_reason", "error"]
    with open(output_dir / METRICS_FILE, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(getattr(row, name)) for name in header])
    (output_dir / SUMMARY_FILE).write_text(json.dumps(report.model_dump(), indent=2, sort_keys=True) + "\n")


def run_benchmark(problem_set: Union[str, Path, ProblemSetDocument, List[LoadedProblem]],
                  config: Optional[MotionGenConfig] = None, output_dir: Union[str, Path, None] = None,
                  mode: str = "full", jobs: int = 1, record_timing: bool = True) -> ReportDocument:
    if mode not in BENCH_MODES:
        raise ProblemError(f"Unknown benchmark mode '{mode}', expected one of {BENCH_MODES}")
    problems = problem_set if isinstance(problem_set, list) else load_problem_set(problem_set, config)
    logger.info(f"[BENCH] running {len(problems)} problems in {mode} mode with {jobs} jobs")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda p: run_problem(p, mode), problems))
    else:
        rows = [run_problem(p, mode) for p in problems]
    if not record_timing:
        for row in rows:
            row.compute_time = None
    rows.sort(key=lambda r: r.id)

    columns = columns_for(mode)
    report = aggregate(rows, columns)
    report.mode = mode
    if output_dir is not None:
        write_report(rows, report, output_dir, columns)
    logger.info(f"[BENCH] success {report.success_percent}"
                f"{'%' if report.success_percent != NOT_AVAILABLE else ''} over {len(rows)} problems")
    return report
