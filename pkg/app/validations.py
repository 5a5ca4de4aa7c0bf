from __future__ import annotations

from typing import Dict, Optional, Union

import numpy as np
from numpy.typing import NDArray

from app.cost_rollout import orientation_error, stencil_derivatives
from app.data_structures import ValidationReport, Violation
from app.exceptions import ShapeMismatchError, TrajectoryError
from app.logger_service import LoggerService
from app.models import Pose, RobotModel, WorldModel
from app.robot_model import forward_kinematics
from app.world_geometry import signed_distance_batch

logger = LoggerService(__name__)

DERIVATIVE_LIMITS = (
    ("velocity_limit", "velocity_limits"),
    ("acceleration_limit", "acceleration_limits"),
    ("jerk_limit", "jerk_limits"),
)


def _check_positions(positions, robot: RobotModel) -> NDArray:
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != robot.dof:
        raise ShapeMismatchError("trajectory positions", ("T", robot.dof), positions.shape)
    if positions.shape[0] < 5:
        raise TrajectoryError(f"Need at least 5 waypoints to check derivatives, got {positions.shape[0]}")
    if not np.all(np.isfinite(positions)):
        raise TrajectoryError("Trajectory contains non-finite positions")
    return positions


def _first_steps(mask: NDArray) -> NDArray:
    return np.nonzero(np.any(mask.reshape(mask.shape[0], -1), axis=1))[0]


def validate_trajectory(
    positions,
    dt: float,
    robot: RobotModel,
    world: WorldModel,
    goal: Optional[Union[Pose, NDArray]] = None,
    position_threshold: float = 0.005,
    rotation_threshold: float = 0.05,
    limit_tolerance: float = 1e-6,
    rest_tolerance: float = 1e-6,
) -> ValidationReport:
    """
    re-check a trajectory from its raw positions alone:
    1. joint positions inside limits at every step
    2. stencil velocity, acceleration and jerk within limits (relative tolerance)
    3. no sphere penetrating an obstacle, no checked sphere pair overlapping
    4. velocity, acceleration and jerk at the final step within rest_tolerance
    5. final pose (or configuration) within the goal thresholds
    """
    positions = _check_positions(positions, robot)
    if dt <= 0:
        raise TrajectoryError(f"dt must be positive, got {dt}")
    report = ValidationReport()
    violations = report.violations

    outside = (positions < robot.lower - limit_tolerance) | (positions > robot.upper + limit_tolerance)
    for step in _first_steps(outside):
        joint = int(np.argmax(outside[step]))
        violations.append(Violation(int(step), "position_limit", f"joint {joint} at {positions[step, joint]:.6f}"))

    derivatives = stencil_derivatives(positions, dt)
    for (kind, attribute), values in zip(DERIVATIVE_LIMITS, derivatives):
        limit = getattr(robot, attribute)
        over = np.abs(values) > limit * (1.0 + limit_tolerance)
        for step in _first_steps(over):
            joint = int(np.argmax(np.abs(values[step]) / limit))
            violations.append(Violation(int(step), kind, f"joint {joint} |{values[step, joint]:.6g}| > {limit[joint]:.6g}"))

    kinematics = forward_kinematics(robot, positions)
    spheres = kinematics.sphere_positions
    radii = robot.sphere_radii
    active = radii >= 0.0
    if world.num_boxes and robot.num_spheres:
        distance, _ = signed_distance_batch(world, spheres.reshape(-1, 3))
        clearance = distance.reshape(positions.shape[0], -1) - radii
        hit = (clearance < 0.0) & active
        for step in _first_steps(hit):
            sphere = int(np.argmin(np.where(active, clearance[step], np.inf)))
            violations.append(Violation(int(step), "world_collision",
                                        f"sphere {sphere} penetrates by {-clearance[step, sphere]:.6f} m"))
    if len(robot.self_pairs):
        i, j = robot.self_pairs[:, 0], robot.self_pairs[:, 1]
        checked = (radii[i] > 0) & (radii[j] > 0)
        gap = np.linalg.norm(spheres[:, i] - spheres[:, j], axis=-1) - radii[i] - radii[j]
        overlap = (gap < 0.0) & checked
        for step in _first_steps(overlap):
            pair = int(np.argmin(np.where(checked, gap[step], np.inf)))
            violations.append(Violation(int(step), "self_collision",
                                        f"spheres {int(i[pair])}/{int(j[pair])} overlap by {-gap[step, pair]:.6f} m"))

    last = positions.shape[0] - 1
    for name, values in zip(("velocity", "acceleration", "jerk"), derivatives):
        peak = float(np.max(np.abs(values[-1])))
        if peak > rest_tolerance:
            violations.append(Violation(last, "terminal_rest", f"final {name} {peak:.3g}"))

    if isinstance(goal, Pose):
        report.position_error = float(np.linalg.norm(kinematics.ee_position[-1] - goal.position))
        report.orientation_error = float(orientation_error(kinematics.ee_quaternion[-1], goal.quaternion))
        if report.position_error >= position_threshold or report.orientation_error > rotation_threshold:
            violations.append(Violation(last, "pose", f"position error {report.position_error:.6f} m, "
                                                      f"orientation error {report.orientation_error:.6f}"))
    elif goal is not None:
        report.position_error = float(np.max(np.abs(positions[-1] - np.asarray(goal, dtype=np.float64))))
        report.orientation_error = 0.0
        if report.position_error > position_threshold:
            violations.append(Violation(last, "goal_configuration",
                                        f"joint error {report.position_error:.6f} rad"))

    violations.sort(key=lambda v: (v.step, v.kind))
    if violations:
        logger.debug(f"[VALIDATE] {len(violations)} violations, first at {violations[0]}")
    return report


def trajectory_metrics(positions, dt: float) -> Dict[str, float]:
    """Motion metrics from raw positions: path length is the L1 sum of joint steps."""
    positions = np.asarray(positions, dtype=np.float64)
    vel, acc, jerk = stencil_derivatives(positions, dt)
    dof = positions.shape[1]
    return {
        "motion_time": float((positions.shape[0] - 1) * dt),
        "c_space_path_length": float(np.sum(np.abs(np.diff(positions, axis=0)))),
        "max_jerk": float(np.max(np.abs(jerk))),
        "max_accel": float(np.max(np.abs(acc))),
        "mean_velocity": float(np.mean(np.sum(np.abs(vel), axis=1) / dof)),
    }
