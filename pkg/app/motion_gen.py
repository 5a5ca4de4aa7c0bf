"""
End-to-end motion generation: collision-free IK, seed generation, two-phase
trajectory optimization with retiming, interpolation and selection.
"""
from __future__ import annotations

import math
import time
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import CubicHermiteSpline

from .config import MotionGenConfig, PlannerConfig, SelectionWeights
from .cost_rollout import (
    IkRollout,
    RolloutProblem,
    TrajectoryRollout,
    make_trajectory,
    materialize,
    orientation_error,
)
from .data_structures import IkSolution, MotionResult, SeedBatch, TrajOptResult, Trajectory, ValidationReport
from .exceptions import ProblemError, ShapeMismatchError, SolverError, TrajectoryError
from .geometric_planner import mask_samples, plan
from .logger_service import LoggerService
from .models import Pose, RobotModel, WorldModel
from .robot_model import forward_kinematics
from .solvers import lbfgs_solve, particle_solve
from .utils import content_streams, halton_samples
from .validations import trajectory_metrics, validate_trajectory

logger = LoggerService(__name__)

SEED_MODES = ("linear", "retract", "graph_plan")
FAILURE_REASONS = ("invalid_start", "no_ik", "optimization_failed", "planner_failed")
MIN_RETIME_SCALE = 1e-3
# fine samples held at the final position after the motion ends
HELD_SAMPLES = 2
MIN_FINE_STEPS = 5
_RETIME_ROUNDS = 12
_RETIME_MARGIN = 2e-3
_BINDING_RATIO = 0.99

Goal = Union[Pose, NDArray]


def solve_ik_detailed(robot: RobotModel, world: WorldModel, goal: Pose, n_seeds: int,
                      config: Optional[MotionGenConfig] = None, current: Optional[NDArray] = None,
                      seed: Optional[int] = None) -> List[IkSolution]:
    """Valid IK solutions ranked by pose error plus weighted distance to the current configuration."""
    config = config or MotionGenConfig()
    seed = config.seed if seed is None else seed
    if n_seeds < 1:
        raise ProblemError(f"IK needs at least one seed, got {n_seeds}")
    reference = robot.retract_config if current is None else np.clip(
        np.asarray(current, dtype=np.float64), robot.lower, robot.upper)

    seeds = halton_samples(n_seeds, robot.lower, robot.upper, seed)
    if current is not None:
        seeds[0] = reference
    problem = RolloutProblem(robot=robot, world=world, start=reference, goal=goal, weights=config.weights)
    rollout = IkRollout(problem)
    bounds = (rollout.lower, rollout.upper)
    mean = particle_solve(rollout, seeds, config.ik_particles, content_streams(seed, seeds), bounds)
    result = lbfgs_solve(rollout, mean, config.ik_iterations, config.lbfgs, bounds, early_exit=True)

    q = result.best_theta
    kinematics = forward_kinematics(robot, q)
    position_error = np.linalg.norm(kinematics.ee_position - goal.position, axis=-1)
    rotation_error = orientation_error(kinematics.ee_quaternion, goal.quaternion)
    valid = ((position_error < config.position_threshold) & (rotation_error <= config.rotation_threshold)
             & mask_samples(robot, world, q))
    score = position_error + config.ik_distance_weight * np.linalg.norm(q - reference, axis=-1)
    order = [int(k) for k in np.argsort(score, kind="stable") if valid[k]]
    logger.info(f"[IK] {len(order)}/{n_seeds} seeds converged to valid solutions")
    return [IkSolution(q[k].copy(), float(position_error[k]), float(rotation_error[k]), float(score[k]))
            for k in order]


def solve_ik(robot: RobotModel, world: WorldModel, goal: Pose, n_seeds: int, rng: Optional[int] = None,
             config: Optional[MotionGenConfig] = None, current: Optional[NDArray] = None) -> List[NDArray]:
    return [s.q for s in solve_ik_detailed(robot, world, goal, n_seeds, config, current, rng)]


def resample_path(path: NDArray, steps: int) -> NDArray:
    """Uniform arc-length resampling of a waypoint path onto a fixed step count."""
    path = np.atleast_2d(np.asarray(path, dtype=np.float64))
    segment = np.linalg.norm(np.diff(path, axis=0), axis=1)
    keep = np.concatenate([[True], segment > 0.0])
    knots_path = path[keep]
    if knots_path.shape[0] == 1:
        return np.repeat(path[:1], steps, axis=0)
    knots = np.concatenate([[0.0], np.cumsum(segment[segment > 0.0])])
    s = np.linspace(0.0, knots[-1], steps)
    resampled = np.stack([np.interp(s, knots, knots_path[:, j]) for j in range(path.shape[1])], axis=1)
    resampled[0] = path[0]
    resampled[-1] = path[-1]
    return resampled


def generate_seeds(start: NDArray, ik_solutions: Sequence[NDArray], mode: str, horizon: int,
                   count: Optional[int] = None, robot: Optional[RobotModel] = None,
                   world: Optional[WorldModel] = None,
                   planner_config: Optional[PlannerConfig] = None) -> SeedBatch:
    if mode not in SEED_MODES:
        raise ProblemError(f"Unknown seed mode '{mode}'")
    if len(ik_solutions) == 0:
        raise ProblemError("Seed generation needs at least one IK solution")
    start = np.asarray(start, dtype=np.float64)
    solutions = np.atleast_2d(np.asarray(ik_solutions, dtype=np.float64))
    count = count or solutions.shape[0]
    targets = [solutions[k % solutions.shape[0]] for k in range(count)]
    fallback = np.zeros(count, dtype=bool)

    if mode == "retract":
        if robot is None:
            raise ProblemError("Retract seeding needs the robot model")
        seeds = [resample_path([start, robot.retract_config, target], horizon) for target in targets]
    elif mode == "graph_plan":
        if robot is None or world is None:
            raise ProblemError("Graph seeding needs the robot and world models")
        goals = solutions[:min(solutions.shape[0], count)]
        results = plan(robot, world, np.repeat(start[None], goals.shape[0], axis=0), goals, planner_config)
        seeds = []
        for k, target in enumerate(targets):
            found = results[k % goals.shape[0]]
            if found.found:
                seeds.append(resample_path(found.path, horizon))
            else:
                seeds.append(resample_path([start, target], horizon))
                fallback[k] = True
        if np.any(fallback):
            logger.warning(f"[PLANNER] {int(np.sum(fallback))}/{count} graph seeds fell back to linear")
    else:
        seeds = [resample_path([start, target], horizon) for target in targets]
    return SeedBatch(np.array(seeds), fallback)


def derivative_ratio(trajectory: Trajectory, robot: RobotModel) -> float:
    """Largest of |v|/v_lim, sqrt(|a|/a_lim), cbrt(|j|/j_lim); 1 means a limit is just reached."""
    velocity = np.max(np.abs(trajectory.velocity) / robot.velocity_limits)
    acceleration = np.sqrt(np.max(np.abs(trajectory.acceleration) / robot.acceleration_limits))
    jerk = np.cbrt(np.max(np.abs(trajectory.jerk) / robot.jerk_limits))
    return float(max(velocity, acceleration, jerk))


def retime(trajectory: Trajectory, robot: RobotModel) -> float:
    if trajectory.num_steps < 2:
        raise TrajectoryError("Cannot retime a trajectory with fewer than two steps")
    if trajectory.dt <= 0:
        raise TrajectoryError(f"dt must be positive, got {trajectory.dt}")
    scale = max(derivative_ratio(trajectory, robot), MIN_RETIME_SCALE)
    return trajectory.dt * scale


def interpolate(trajectory: Trajectory, dt_out: float) -> Trajectory:
    """
    Cubic Hermite interpolation through the knots with stencil velocities.
    Samples sit at k * dt_out; those at or past the end hold the final position.
    """
    if dt_out <= 0:
        raise TrajectoryError(f"Interpolation dt must be positive, got {dt_out}")
    positions = trajectory.positions
    duration = (positions.shape[0] - 1) * trajectory.dt
    count = max(int(math.ceil(duration / dt_out - 1e-9)) + 1 + HELD_SAMPLES, MIN_FINE_STEPS)
    times = np.arange(count) * dt_out
    if positions.shape[0] < 2:
        fine = np.repeat(positions[:1], count, axis=0)
    else:
        knots = np.arange(positions.shape[0]) * trajectory.dt
        spline = CubicHermiteSpline(knots, positions, trajectory.velocity, axis=0)
        fine = spline(np.minimum(times, knots[-1]))
        fine[times >= knots[-1]] = positions[-1]
    fine[0] = positions[0]
    return make_trajectory(fine, dt_out)


def select_best(candidates: Sequence[Tuple], weights: Optional[SelectionWeights] = None) -> int:
    """Index of the lowest blended score; each candidate ends with (pose_error, max_jerk, motion_time)."""
    if not candidates:
        raise TrajectoryError("No trajectories to select from")
    weights = weights or SelectionWeights()
    scores = [weights.pose_error * c[-3] + weights.max_jerk * c[-2] + weights.motion_time * c[-1]
              for c in candidates]
    return int(np.argmin(scores))


def _validate(positions: NDArray, dt: float, problem: RolloutProblem, config: MotionGenConfig) -> ValidationReport:
    return validate_trajectory(positions, dt, problem.robot, problem.world, problem.goal,
                               config.position_threshold, config.rotation_threshold, config.limit_tolerance)


def optimize_trajectory(problem: RolloutProblem, seeds: NDArray, iterations: int,
                        config: Optional[MotionGenConfig] = None, particles: bool = True,
                        early_exit: bool = False, seed: Optional[int] = None) -> TrajOptResult:
    config = config or MotionGenConfig()
    seed = config.seed if seed is None else seed
    seeds = np.asarray(seeds, dtype=np.float64)
    expected = (problem.horizon, problem.robot.dof)
    if seeds.ndim != 3 or seeds.shape[1:] != expected:
        raise ShapeMismatchError("trajectory seeds", ("K",) + expected, seeds.shape)
    count = seeds.shape[0]
    rollout = TrajectoryRollout(problem)
    bounds = (rollout.lower, rollout.upper)

    theta = materialize(seeds, problem.start).reshape(count, -1)
    if particles and config.trajopt_particles.n_iterations > 0:
        theta = particle_solve(rollout, theta, config.trajopt_particles, content_streams(seed, theta), bounds)
    result = lbfgs_solve(rollout, theta, iterations, config.lbfgs, bounds, early_exit=early_exit)
    positions = materialize(result.best_theta.reshape((count,) + expected), problem.start)

    feasible = np.zeros(count, dtype=bool)
    position_errors = np.zeros(count)
    rotation_errors = np.zeros(count)
    for k in range(count):
        fine = interpolate(make_trajectory(positions[k], problem.dt), config.interpolation_dt)
        report = _validate(fine.positions, fine.dt, problem, config)
        feasible[k] = report.ok
        position_errors[k] = report.position_error
        rotation_errors[k] = report.orientation_error
    logger.info(f"[TRAJOPT] dt {problem.dt:.4f}, jerk {'on' if problem.jerk_enabled else 'off'}: "
                f"{int(feasible.sum())}/{count} seeds feasible after {result.iterations} iterations")
    return TrajOptResult(positions, result.best_cost, feasible, position_errors, rotation_errors, problem.dt)


def final_retime(positions: NDArray, dt: float, robot: RobotModel, dt_out: float) -> Tuple[float, Trajectory]:
    """Retime so the interpolated trajectory just reaches, and never exceeds, a derivative limit."""
    dt = retime(make_trajectory(positions, dt), robot)
    dt_min = dt * MIN_RETIME_SCALE
    fine = interpolate(make_trajectory(positions, dt), dt_out)
    for _ in range(_RETIME_ROUNDS):
        ratio = derivative_ratio(fine, robot)
        if ratio == 0.0 or _BINDING_RATIO <= ratio <= 1.0 or (ratio < 1.0 and dt <= dt_min):
            break
        dt = max(dt * ratio * (1.0 + _RETIME_MARGIN), dt_min)
        fine = interpolate(make_trajectory(positions, dt), dt_out)
    while derivative_ratio(fine, robot) > 1.0:
        dt *= derivative_ratio(fine, robot) * (1.0 + 10 * _RETIME_MARGIN)
        fine = interpolate(make_trajectory(positions, dt), dt_out)
    logger.debug(f"[RETIME] dt {dt:.5f}, interpolated ratio {derivative_ratio(fine, robot):.4f}")
    return dt, fine


def _candidates(problem: RolloutProblem, positions: NDArray, indices: Sequence[int], dt: float,
                config: MotionGenConfig):
    found = []
    for k in indices:
        dt_final, fine = final_retime(positions[k], dt, problem.robot, config.interpolation_dt)
        report = _validate(fine.positions, fine.dt, problem, config)
        if report.ok:
            metrics = trajectory_metrics(fine.positions, fine.dt)
            found.append((k, positions[k], dt_final, fine, report,
                          report.position_error, metrics["max_jerk"], metrics["motion_time"]))
        else:
            logger.debug(f"[RETIME] seed {k} rejected: {report.first_violation()}")
    return found


def _attempt(robot: RobotModel, world: WorldModel, start: NDArray, goal: Goal, mode: str, seeds: NDArray,
             config: MotionGenConfig, seed: int, timings: dict):
    goal_mode = "pose_goal" if isinstance(goal, Pose) else "cspace_goal"
    clock = time.perf_counter()
    first_problem = RolloutProblem(robot=robot, world=world, start=start, goal=goal, mode=goal_mode,
                                   weights=config.weights.scaled_for_dt(config.dt_init), dt=config.dt_init,
                                   jerk_enabled=False, horizon=config.horizon)
    first = optimize_trajectory(first_problem, seeds, config.first_iterations, config, seed=seed)
    timings["trajopt"] = timings.get("trajopt", 0.0) + time.perf_counter() - clock
    feasible = np.nonzero(first.feasible)[0]
    if feasible.size == 0:
        return None

    clock = time.perf_counter()
    coarse = [(k, first.position_errors[k], *_coarse_scores(first.positions[k], first.dt))
              for k in feasible]
    best = coarse[select_best([c[1:] for c in coarse], config.selection)][0]
    dt_opt = retime(make_trajectory(first.positions[best], config.dt_init), robot)
    logger.info(f"[RETIME] seed {best}: dt {config.dt_init:.3f} -> {dt_opt:.4f}")

    second_problem = replace(first_problem, weights=config.weights.scaled_for_dt(dt_opt), dt=dt_opt,
                             jerk_enabled=True)
    second = optimize_trajectory(second_problem, first.positions, config.retime_iterations, config,
                                 particles=False, early_exit=True, seed=seed)
    found = _candidates(second_problem, second.positions, range(seeds.shape[0]), dt_opt, config)
    if not found:
        logger.warning(f"[RETIME] no re-optimized seed passed validation, using first-phase solutions")
        found = _candidates(first_problem, first.positions, feasible, config.dt_init, config)
    timings["retime"] = timings.get("retime", 0.0) + time.perf_counter() - clock
    if not found:
        return None
    chosen = found[select_best([f[-3:] for f in found], config.selection)]
    logger.info(f"[TRAJOPT] {mode} attempt: {len(found)} feasible, selected seed {chosen[0]}")
    return chosen


def _coarse_scores(positions: NDArray, dt: float) -> Tuple[float, float]:
    trajectory = make_trajectory(positions, dt)
    return float(np.max(np.abs(trajectory.jerk))), trajectory.motion_time


def _attempt_modes(config: MotionGenConfig) -> List[str]:
    return [SEED_MODES[k % 2] for k in range(config.retries)] + ["graph_plan"]


def plan_motion(robot: RobotModel, world: WorldModel, start: NDArray, goal: Goal,
                config: Optional[MotionGenConfig] = None, execution: bool = False,
                seed_modes: Optional[Sequence[str]] = None) -> MotionResult:
    """
    Solve IK, then optimize seeds attempt by attempt until one passes validation.
    seed_modes overrides the default schedule (alternating linear and retract
    seeds for config.retries attempts, then graph seeds).
    """
    config = config or MotionGenConfig()
    clock = time.perf_counter()
    timings = {}
    diagnostics = {"seeds_attempted": 0, "attempts": [], "timings": timings}
    start = np.asarray(start, dtype=np.float64)
    if start.shape != (robot.dof,):
        raise ShapeMismatchError("start configuration", (robot.dof,), start.shape)
    if not mask_samples(robot, world, start[None])[0]:
        logger.warning("[MOTIONGEN] start configuration is out of limits or in collision")
        return MotionResult(False, "invalid_start", diagnostics=diagnostics)

    if isinstance(goal, Pose):
        solutions = solve_ik(robot, world, goal, config.ik_seeds, config.seed, config, current=start)
    else:
        goal = np.asarray(goal, dtype=np.float64)
        if goal.shape != (robot.dof,):
            raise ShapeMismatchError("goal configuration", (robot.dof,), goal.shape)
        solutions = [goal] if mask_samples(robot, world, goal[None])[0] else []
    timings["ik"] = time.perf_counter() - clock
    diagnostics["ik_solutions"] = len(solutions)
    if not solutions:
        logger.warning("[IK] no collision-free IK solution")
        return MotionResult(False, "no_ik", diagnostics=diagnostics)

    planner_config = replace(config.planner, seed=config.planner.seed + config.seed)
    planner_failed = False
    chosen = None
    for attempt, mode in enumerate(seed_modes or _attempt_modes(config)):
        pool = solutions[:config.graph_goals] if mode == "graph_plan" else solutions
        batch = generate_seeds(start, pool, mode, config.horizon, config.to_seeds, robot, world, planner_config)
        planner_failed = mode == "graph_plan" and bool(np.all(batch.fallback))
        diagnostics["seeds_attempted"] += batch.seeds.shape[0]
        diagnostics["attempts"].append(mode)
        try:
            chosen = _attempt(robot, world, start, goal, mode, batch.seeds, config, config.seed + attempt, timings)
        except SolverError as e:
            logger.error(f"[TRAJOPT] {mode} attempt aborted: {e}")
            chosen = None
        if chosen is not None:
            break

    timings["total"] = time.perf_counter() - clock
    if chosen is None:
        reason = "planner_failed" if planner_failed else "optimization_failed"
        logger.warning(f"[MOTIONGEN] failed after {len(diagnostics['attempts'])} attempts: {reason}")
        return MotionResult(False, reason, diagnostics=diagnostics)

    _, coarse, dt_final, fine, report = chosen[:5]
    metrics = trajectory_metrics(fine.positions, fine.dt)
    metrics["position_error"] = report.position_error
    metrics["orientation_error"] = report.orientation_error
    execution_trajectory = None
    if execution:
        execution_trajectory = interpolate(make_trajectory(coarse, dt_final), config.execution_dt)
    logger.info(f"[MOTIONGEN] success: motion time {metrics['motion_time']:.3f} s, "
                f"position error {report.position_error * 1000:.3f} mm")
    # reported derivatives are smoothed; metrics above come from the raw stencil
    reported = make_trajectory(fine.positions, fine.dt, smooth_acceleration=True)
    return MotionResult(True, None, reported, dt_final, metrics, diagnostics, execution_trajectory)
