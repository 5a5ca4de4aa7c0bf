"""
Batched rollouts mapping decision variables (trajectories or terminal
configurations) to scalar cost and gradient.

Trajectory decision tensors hold T rows. Rows 0..2 alias the start and rows
T-4..T-2 alias row T-1, so the free variables are rows 3..T-1 and the
trajectory starts and ends at rest.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import uniform_filter1d

from .config import CostWeights
from .data_structures import Trajectory
from .exceptions import ProblemError, ShapeMismatchError, TrajectoryError
from .logger_service import LoggerService
from .models import Pose, RobotModel, WorldModel
from .robot_model import forward_kinematics, kinematics_gradient
from .utils import logcosh
from .world_geometry import self_collision_batch, sphere_collision_batch, swept_collision_batch

logger = LoggerService(__name__)

BOUNDARY_STEPS = 3
_VEL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_ACC = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_JERK = np.array([-1.0, 2.0, 0.0, -2.0, 1.0]) / 2.0


def _stencil(positions: NDArray, dt: float) -> Tuple[NDArray, NDArray, NDArray]:
    """Five-point derivatives along axis -2, clamping indices at both ends."""
    t = positions.shape[-2]
    pad = [(0, 0)] * positions.ndim
    pad[-2] = (2, 2)
    padded = np.pad(positions, pad, mode="edge")
    shifted = [padded[..., k:k + t, :] for k in range(5)]
    vel = sum(c * s for c, s in zip(_VEL, shifted)) / dt
    acc = sum(c * s for c, s in zip(_ACC, shifted)) / dt ** 2
    jerk = sum(c * s for c, s in zip(_JERK, shifted)) / dt ** 3
    return vel, acc, jerk


def _stencil_adjoint(g_vel: NDArray, g_acc: NDArray, g_jerk: NDArray, dt: float) -> NDArray:
    t = g_vel.shape[-2]
    shape = list(g_vel.shape)
    shape[-2] = t + 4
    padded = np.zeros(shape)
    for k in range(5):
        padded[..., k:k + t, :] += (_VEL[k] * g_vel / dt + _ACC[k] * g_acc / dt ** 2
                                    + _JERK[k] * g_jerk / dt ** 3)
    gradient = padded[..., 2:t + 2, :].copy()
    gradient[..., 0, :] += padded[..., 0, :] + padded[..., 1, :]
    gradient[..., -1, :] += padded[..., -1, :] + padded[..., -2, :]
    return gradient


def stencil_derivatives(positions: NDArray, dt: float) -> Tuple[NDArray, NDArray, NDArray]:
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[0] < 5:
        raise TrajectoryError(f"Stencil derivatives need at least 5 steps, got shape {positions.shape}")
    if dt <= 0:
        raise TrajectoryError(f"dt must be positive, got {dt}")
    return _stencil(positions, dt)


def filter_acceleration(acceleration: NDArray, window: int = 3) -> NDArray:
    """Sliding mean over time, for reporting converged trajectories."""
    return uniform_filter1d(acceleration, size=window, axis=-2, mode="nearest")


def make_trajectory(positions: NDArray, dt: float, smooth_acceleration: bool = False) -> Trajectory:
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[0] == 0:
        raise TrajectoryError("Trajectory needs a nonempty T x D position matrix")
    if dt <= 0:
        raise TrajectoryError(f"dt must be positive, got {dt}")
    vel, acc, jerk = _stencil(positions, dt)
    if smooth_acceleration:
        acc = filter_acceleration(acc)
    return Trajectory(positions=positions, dt=float(dt), velocity=vel, acceleration=acc, jerk=jerk)


def bound_cost(value, lower, upper, eta: float, weight: float = 1.0):
    """Elementwise soft limit: zero inside, quadratic within eta of a limit, linear beyond."""
    value = np.asarray(value, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if np.any(lower >= upper):
        raise ValueError("bound cost needs lower < upper")
    if np.any(eta >= 0.5 * (upper - lower)):
        raise ValueError(f"bound activation {eta} must be below half the limit range")
    above = value - upper
    below = lower - value
    cost = np.where(
        above > 0.0, above + 0.5 * eta,
        np.where(above > -eta, 0.5 / eta * (above + eta) ** 2,
                 np.where(below > 0.0, below + 0.5 * eta,
                          np.where(below > -eta, 0.5 / eta * (below + eta) ** 2, 0.0))))
    gradient = np.where(
        above > 0.0, 1.0,
        np.where(above > -eta, (above + eta) / eta,
                 np.where(below > 0.0, -1.0,
                          np.where(below > -eta, -(below + eta) / eta, 0.0))))
    return weight * cost, weight * gradient


def orientation_error(quat_a: NDArray, quat_b: NDArray) -> NDArray:
    return 1.0 - np.abs(np.sum(quat_a * quat_b, axis=-1))


def pose_cost_batch(ee_pos: NDArray, ee_quat: NDArray, goal: Pose, weights: CostWeights):
    offset = ee_pos - goal.position
    distance = np.linalg.norm(offset, axis=-1)
    inner = ee_quat @ goal.quaternion
    rot_error = 1.0 - np.abs(inner)
    cost = (weights.pose_pos * logcosh(weights.pose_pos_scale * distance)
            + weights.pose_rot * logcosh(weights.pose_rot_scale * rot_error))

    pos_slope = weights.pose_pos * weights.pose_pos_scale * np.tanh(weights.pose_pos_scale * distance)
    safe = np.where(distance > 0.0, distance, 1.0)
    d_pos = np.where(distance[:, None] > 0.0, pos_slope[:, None] * offset / safe[:, None], 0.0)
    rot_slope = weights.pose_rot * weights.pose_rot_scale * np.tanh(weights.pose_rot_scale * rot_error)
    sign = np.where(inner >= 0.0, 1.0, -1.0)
    d_quat = -(rot_slope * sign)[:, None] * goal.quaternion[None, :]
    return cost, d_pos, d_quat


def pose_cost(ee: Pose, goal: Pose, weights: CostWeights) -> Tuple[float, NDArray, NDArray]:
    cost, d_pos, d_quat = pose_cost_batch(ee.position[None], ee.quaternion[None], goal, weights)
    return float(cost[0]), d_pos[0], d_quat[0]


def cspace_cost_batch(q_t: NDArray, q_goal: NDArray, weights: CostWeights):
    delta = q_t - q_goal
    squared = np.sum(delta * delta, axis=-1)
    cost = weights.cspace * logcosh(weights.cspace_scale * squared)
    slope = weights.cspace * weights.cspace_scale * np.tanh(weights.cspace_scale * squared)
    return cost, 2.0 * slope[..., None] * delta


def cspace_cost(q_t: NDArray, q_goal: NDArray, weights: CostWeights) -> Tuple[float, NDArray]:
    q_t = np.asarray(q_t, dtype=np.float64)
    q_goal = np.asarray(q_goal, dtype=np.float64)
    if q_t.shape != q_goal.shape:
        raise ShapeMismatchError("cspace goal", q_t.shape, q_goal.shape)
    cost, gradient = cspace_cost_batch(q_t[None], q_goal[None], weights)
    return float(cost[0]), gradient[0]


def _smoothness_terms(vel, acc, jerk, weights: CostWeights, jerk_enabled: bool):
    terms = {
        "smoothness_acc": weights.accel * np.sum(acc * acc, axis=(-2, -1)),
        "smoothness_jerk": (weights.jerk * np.sum(jerk * jerk, axis=(-2, -1)) if jerk_enabled
                            else np.zeros(acc.shape[:-2])),
        "velocity_boundary": np.zeros(acc.shape[:-2]),
    }
    g_vel = np.zeros_like(vel)
    g_acc = 2.0 * weights.accel * acc
    g_jerk = 2.0 * weights.jerk * jerk if jerk_enabled else np.zeros_like(jerk)
    if weights.velocity_boundary_enabled:
        t = vel.shape[-2]
        rows = sorted(set(range(min(BOUNDARY_STEPS, t))) | set(range(max(t - BOUNDARY_STEPS, 0), t)))
        boundary = vel[..., rows, :]
        terms["velocity_boundary"] = weights.vel_boundary * np.sum(
            logcosh(weights.vel_scale * boundary), axis=(-2, -1))
        g_vel[..., rows, :] = weights.vel_boundary * weights.vel_scale * np.tanh(weights.vel_scale * boundary)
    return terms, (g_vel, g_acc, g_jerk)


def smoothness_cost(vel, acc, jerk, weights: CostWeights, jerk_enabled: bool):
    vel, acc, jerk = (np.asarray(a, dtype=np.float64) for a in (vel, acc, jerk))
    if not vel.shape == acc.shape == jerk.shape:
        raise ShapeMismatchError("derivatives", vel.shape, (acc.shape, jerk.shape))
    terms, gradients = _smoothness_terms(vel, acc, jerk, weights, jerk_enabled)
    return sum(terms.values()), gradients


@dataclass
class RolloutProblem:
    robot: RobotModel
    world: WorldModel
    start: NDArray
    goal: Union[Pose, NDArray]
    mode: str = "pose_goal"
    weights: CostWeights = None
    dt: float = 0.25
    jerk_enabled: bool = False
    horizon: int = 32

    def __post_init__(self):
        if self.weights is None:
            self.weights = CostWeights()
        self.start = np.asarray(self.start, dtype=np.float64)
        if self.start.shape != (self.robot.dof,):
            raise ShapeMismatchError("start configuration", (self.robot.dof,), self.start.shape)
        if not self.robot.within_limits(self.start)[0]:
            raise ProblemError("Start configuration is outside the position limits")
        if self.mode not in ("pose_goal", "cspace_goal"):
            raise ProblemError(f"Unknown rollout mode '{self.mode}'")
        if self.mode == "cspace_goal":
            self.goal = np.asarray(self.goal, dtype=np.float64)
            if self.goal.shape != (self.robot.dof,):
                raise ShapeMismatchError("cspace goal", (self.robot.dof,), self.goal.shape)
        elif not isinstance(self.goal, Pose):
            raise ProblemError("pose_goal mode needs a Pose goal")
        if self.horizon < 8:
            raise ProblemError(f"Horizon must be at least 8 steps, got {self.horizon}")
        if self.dt <= 0:
            raise ProblemError(f"dt must be positive, got {self.dt}")


def materialize(theta: NDArray, start: NDArray) -> NDArray:
    """Apply the boundary aliasing to a B x T x D decision tensor."""
    positions = np.array(theta, dtype=np.float64)
    positions[..., :BOUNDARY_STEPS, :] = start
    positions[..., -BOUNDARY_STEPS - 1:-1, :] = positions[..., -1:, :]
    return positions


def fold_gradient(gradient: NDArray) -> NDArray:
    """Route gradients of aliased rows to the rows they alias."""
    folded = np.array(gradient)
    folded[..., -1, :] += np.sum(folded[..., -BOUNDARY_STEPS - 1:-1, :], axis=-2)
    folded[..., -BOUNDARY_STEPS - 1:-1, :] = 0.0
    folded[..., :BOUNDARY_STEPS, :] = 0.0
    return folded


def _check_theta(problem: RolloutProblem, theta: NDArray) -> NDArray:
    theta = np.asarray(theta, dtype=np.float64)
    expected = (problem.horizon, problem.robot.dof)
    if theta.ndim != 3 or theta.shape[1:] != expected:
        raise ShapeMismatchError("trajectory batch", ("B",) + expected, theta.shape)
    if not np.all(np.isfinite(theta)):
        raise TrajectoryError("Trajectory batch contains non-finite values")
    return theta


def _terminal_terms(problem: RolloutProblem, kinematics, q_terminal):
    if problem.mode == "pose_goal":
        cost, d_pos, d_quat = pose_cost_batch(kinematics.ee_position, kinematics.ee_quaternion,
                                              problem.goal, problem.weights)
        return cost, d_pos, d_quat, np.zeros_like(q_terminal)
    cost, gradient = cspace_cost_batch(q_terminal, problem.goal, problem.weights)
    return cost, None, None, gradient


def evaluate_trajectory_batch(problem: RolloutProblem, theta: NDArray) -> Tuple[NDArray, NDArray, Dict[str, NDArray]]:
    theta = _check_theta(problem, theta)
    robot, weights = problem.robot, problem.weights
    batch, horizon, dof = theta.shape
    positions = materialize(theta, problem.start)
    vel, acc, jerk = _stencil(positions, problem.dt)

    terms, (g_vel, g_acc, g_jerk) = _smoothness_terms(vel, acc, jerk, weights, problem.jerk_enabled)
    eta = weights.bound_activation
    derivative_bounds = (
        ("bound_velocity", vel, robot.velocity_limits),
        ("bound_acceleration", acc, robot.acceleration_limits),
        ("bound_jerk", jerk, robot.jerk_limits),
    )
    bound_grads = []
    for name, values, limit in derivative_bounds:
        cost, gradient = bound_cost(values, -limit, limit, eta, weights.bound_weight)
        terms[name] = np.sum(cost, axis=(-2, -1))
        bound_grads.append(gradient)
    g_vel = g_vel + bound_grads[0]
    g_acc = g_acc + bound_grads[1]
    g_jerk = g_jerk + bound_grads[2]
    cost, g_position = bound_cost(positions, robot.lower, robot.upper, eta, weights.bound_weight)
    terms["bound_position"] = np.sum(cost, axis=(-2, -1))

    g_positions = _stencil_adjoint(g_vel, g_acc, g_jerk, problem.dt) + g_position

    flat = positions.reshape(-1, dof)
    kinematics = forward_kinematics(robot, flat)
    spheres = kinematics.sphere_positions.reshape(batch, horizon, -1, 3)
    radii = robot.sphere_radii
    num_spheres = spheres.shape[2]

    self_cost, self_grad = self_collision_batch(kinematics.sphere_positions, radii, robot.self_pairs,
                                                weights.self_collision)
    terms["self_collision"] = self_cost.reshape(batch, horizon).sum(axis=1)
    d_spheres = self_grad.reshape(batch, horizon, num_spheres, 3)

    if problem.world.num_boxes and num_spheres:
        prev = np.concatenate([spheres[:, :1], spheres[:, :-1]], axis=1)
        nxt = np.concatenate([spheres[:, 1:], spheres[:, -1:]], axis=1)
        world_cost, g_cur, g_prev, g_next = swept_collision_batch(
            problem.world, prev.reshape(-1, 3), spheres.reshape(-1, 3), nxt.reshape(-1, 3),
            np.tile(radii, batch * horizon), weights.activation, weights.world_collision,
            weights.speed_dt, weights.sweep_steps,
        )
        terms["world_collision"] = world_cost.reshape(batch, horizon, num_spheres).sum(axis=(1, 2))
        g_cur = g_cur.reshape(batch, horizon, num_spheres, 3)
        g_prev = g_prev.reshape(batch, horizon, num_spheres, 3)
        g_next = g_next.reshape(batch, horizon, num_spheres, 3)
        d_spheres = d_spheres + g_cur
        # row t's previous sphere is row t-1 (row 0 is its own previous)
        d_spheres[:, :-1] += g_prev[:, 1:]
        d_spheres[:, 0] += g_prev[:, 0]
        d_spheres[:, 1:] += g_next[:, :-1]
        d_spheres[:, -1] += g_next[:, -1]
    else:
        terms["world_collision"] = np.zeros(batch)

    d_ee_pos = np.zeros((batch, horizon, 3))
    d_ee_quat = np.zeros((batch, horizon, 4))
    last = kinematics.ee_position.reshape(batch, horizon, 3)[:, -1]
    last_quat = kinematics.ee_quaternion.reshape(batch, horizon, 4)[:, -1]
    if problem.mode == "pose_goal":
        cost, d_pos, d_quat = pose_cost_batch(last, last_quat, problem.goal, weights)
        terms["pose"] = cost
        terms["cspace"] = np.zeros(batch)
        d_ee_pos[:, -1] = d_pos
        d_ee_quat[:, -1] = d_quat
    else:
        cost, g_terminal = cspace_cost_batch(positions[:, -1], problem.goal, weights)
        terms["cspace"] = cost
        terms["pose"] = np.zeros(batch)
        g_positions[:, -1] += g_terminal

    g_positions += kinematics_gradient(
        robot, flat, d_spheres.reshape(batch * horizon, num_spheres, 3),
        d_ee_pos.reshape(-1, 3), d_ee_quat.reshape(-1, 4), kinematics=kinematics,
    ).reshape(batch, horizon, dof)

    total = sum(terms.values())
    return total, fold_gradient(g_positions), terms


def rollout_trajectory(problem: RolloutProblem, theta: NDArray) -> Tuple[NDArray, NDArray]:
    cost, gradient, _ = evaluate_trajectory_batch(problem, theta)
    return cost, gradient


def trajectory_cost_terms(problem: RolloutProblem, theta: NDArray) -> Dict[str, NDArray]:
    return evaluate_trajectory_batch(problem, theta)[2]


def evaluate_ik_batch(problem: RolloutProblem, q: NDArray) -> Tuple[NDArray, NDArray, Dict[str, NDArray]]:
    robot, weights = problem.robot, problem.weights
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != robot.dof:
        raise ShapeMismatchError("configuration batch", ("B", robot.dof), q.shape)
    if not np.all(np.isfinite(q)):
        raise TrajectoryError("Configuration batch contains non-finite values")
    kinematics = forward_kinematics(robot, q)
    terms = {}
    cost, d_pos, d_quat, g_q = _terminal_terms(problem, kinematics, q)
    terms["pose" if problem.mode == "pose_goal" else "cspace"] = cost

    cost, g_bound = bound_cost(q, robot.lower, robot.upper, weights.bound_activation, weights.bound_weight)
    terms["bound_position"] = np.sum(cost, axis=-1)
    g_q = g_q + g_bound

    self_cost, d_spheres = self_collision_batch(kinematics.sphere_positions, robot.sphere_radii,
                                                robot.self_pairs, weights.self_collision)
    terms["self_collision"] = self_cost
    batch, num_spheres = q.shape[0], robot.num_spheres
    world_cost, world_grad = sphere_collision_batch(
        problem.world, kinematics.sphere_positions.reshape(-1, 3), np.tile(robot.sphere_radii, batch),
        weights.activation, weights.world_collision,
    )
    terms["world_collision"] = world_cost.reshape(batch, num_spheres).sum(axis=1)
    d_spheres = d_spheres + world_grad.reshape(batch, num_spheres, 3)

    g_q = g_q + kinematics_gradient(robot, q, d_spheres, d_pos, d_quat, kinematics=kinematics)
    return sum(terms.values()), g_q, terms


def rollout_ik(problem: RolloutProblem, q: NDArray) -> Tuple[NDArray, NDArray]:
    cost, gradient, _ = evaluate_ik_batch(problem, q)
    return cost, gradient


def ik_cost_terms(problem: RolloutProblem, q: NDArray) -> Dict[str, NDArray]:
    return evaluate_ik_batch(problem, q)[2]


class TrajectoryRollout:
    """Flattened B x (T*D) view of rollout_trajectory for the solvers."""

    def __init__(self, problem: RolloutProblem):
        self.problem = problem
        self.shape = (problem.horizon, problem.robot.dof)
        self.lower = np.tile(problem.robot.lower, problem.horizon)
        self.upper = np.tile(problem.robot.upper, problem.horizon)

    def __call__(self, x: NDArray) -> Tuple[NDArray, NDArray]:
        theta = x.reshape((-1,) + self.shape)
        cost, gradient = rollout_trajectory(self.problem, theta)
        return cost, gradient.reshape(x.shape)


class IkRollout:
    def __init__(self, problem: RolloutProblem):
        self.problem = problem
        self.lower = problem.robot.lower.copy()
        self.upper = problem.robot.upper.copy()

    def __call__(self, x: NDArray) -> Tuple[NDArray, NDArray]:
        return rollout_ik(self.problem, x)
