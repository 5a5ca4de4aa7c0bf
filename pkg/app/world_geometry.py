"""
Oriented-bounding-box world: signed distances, activation-smoothed sphere
costs, the swept (continuous) collision cost and sphere-pair self-collision.
Penetration depth is positive inside an obstacle throughout this module.
"""
from __future__ import annotations

from pathlib import Path
from typing import Tuple, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import ValidationError

from .data_structures import CollisionQueryResult
from .exceptions import SceneConfigError
from .logger_service import LoggerService
from .models import Obb, Pose, WorldModel
from .schemas import ObstacleDocument, SceneDocument

logger = LoggerService(__name__)

EMPTY_WORLD_DISTANCE = 1e8
_MIN_SEGMENT = 1e-12


def load_scene(source: Union[SceneDocument, dict, str, Path]) -> WorldModel:
    try:
        if isinstance(source, SceneDocument):
            document = source
        elif isinstance(source, dict):
            document = SceneDocument.model_validate(source)
        elif isinstance(source, Path) or not str(source).lstrip().startswith("{"):
            document = SceneDocument.model_validate_json(Path(source).read_text())
        else:
            document = SceneDocument.model_validate_json(source)
    except ValidationError as e:
        raise SceneConfigError(f"Malformed scene document: {e}")
    except OSError as e:
        raise SceneConfigError(f"Cannot read scene document {source}: {e}")

    obstacles = []
    for obstacle in document.obstacles:
        try:
            pose = Pose.from_list(obstacle.pose)
        except ValueError as e:
            raise SceneConfigError(f"Obstacle '{obstacle.name}': {e}")
        obstacles.append(Obb(obstacle.name, pose, 0.5 * np.asarray(obstacle.dims), obstacle.enabled))
    world = WorldModel(tuple(obstacles))
    logger.debug(f"[WORLD] Loaded scene '{document.name}' with {world.num_boxes} enabled boxes")
    return world


def scene_document(world: WorldModel, name: str = "scene") -> SceneDocument:
    return SceneDocument(name=name, obstacles=[
        ObstacleDocument(name=o.name, pose=o.pose.to_list(), dims=(2.0 * o.half_extents).tolist(),
                         enabled=o.enabled)
        for o in world.obstacles
    ])


def box_distance(world: WorldModel, points: NDArray, box: int) -> Tuple[NDArray, NDArray, NDArray]:
    """
    Signed distance of N points to one enabled box, with the outward unit
    gradient of the distance and the nearest surface point.
    """
    rotation = world.rotations[box]
    half = world.half_extents[box]
    local = (points - world.centers[box]) @ rotation
    q = np.abs(local) - half
    outside = np.maximum(q, 0.0)
    outside_norm = np.linalg.norm(outside, axis=-1)
    is_outside = np.any(q > 0.0, axis=-1)
    side = np.where(local >= 0.0, 1.0, -1.0)

    # inside: nearest face by largest q, ties resolved x, y, z
    axis = np.argmax(q, axis=-1)
    face = np.zeros_like(local)
    np.put_along_axis(face, axis[:, None], 1.0, axis=-1)
    inside_distance = np.max(q, axis=-1)

    safe_norm = np.where(outside_norm > 0.0, outside_norm, 1.0)
    normal_local = np.where(is_outside[:, None], side * outside / safe_norm[:, None], side * face)
    closest_local = np.where(
        is_outside[:, None],
        np.clip(local, -half, half),
        np.where(face > 0, side * half, local),
    )
    distance = np.where(is_outside, outside_norm, inside_distance)
    return distance, normal_local @ rotation.T, closest_local @ rotation.T + world.centers[box]


def signed_distance_batch(world: WorldModel, points: NDArray) -> Tuple[NDArray, NDArray]:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    distance = np.full(points.shape[0], EMPTY_WORLD_DISTANCE)
    closest = points.copy()
    for box in range(world.num_boxes):
        d, _, c = box_distance(world, points, box)
        nearer = d < distance
        distance = np.where(nearer, d, distance)
        closest[nearer] = c[nearer]
    return distance, closest


def signed_distance_point(world: WorldModel, p: NDArray) -> Tuple[float, NDArray]:
    distance, closest = signed_distance_batch(world, np.asarray(p, dtype=np.float64)[None, :])
    return float(distance[0]), closest[0]


def smooth_collision_distance(d, eta: float):
    """Activation-smoothed penetration: linear beyond contact, quadratic within eta of it."""
    d = np.asarray(d, dtype=np.float64)
    value = np.where(d > 0.0, d + 0.5 * eta, np.where(d > -eta, 0.5 / eta * (d + eta) ** 2, 0.0))
    return value if value.ndim else float(value)


def smooth_collision_slope(d, eta: float):
    d = np.asarray(d, dtype=np.float64)
    return np.where(d > 0.0, 1.0, np.where(d > -eta, (d + eta) / eta, 0.0))


def sphere_collision_batch(world: WorldModel, centers: NDArray, radii: NDArray, eta: float,
                           weight: float) -> Tuple[NDArray, NDArray]:
    """Discrete cost (N,) and center gradient (N, 3), summed over boxes."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), centers.shape[:1])
    cost = np.zeros(centers.shape[0])
    gradient = np.zeros_like(centers)
    active = radii >= 0.0
    for box in range(world.num_boxes):
        distance, normal, _ = box_distance(world, centers, box)
        penetration = radii - distance
        cost += np.where(active, smooth_collision_distance(penetration, eta), 0.0)
        slope = np.where(active, smooth_collision_slope(penetration, eta), 0.0)
        gradient -= slope[:, None] * normal
    return weight * cost, weight * gradient


def sphere_collision_cost(world: WorldModel, center: NDArray, radius: float, eta: float,
                          weight: float) -> CollisionQueryResult:
    cost, gradient = sphere_collision_batch(world, np.asarray(center)[None, :], np.array([radius]), eta, weight)
    return CollisionQueryResult(float(cost[0]), gradient[0])


def _sweep_direction(world: WorldModel, box: int, cur: NDArray, other: NDArray, radii: NDArray,
                     eta: float, steps: int, start_distance: NDArray, start_normal: NDArray,
                     colliding: NDArray):
    """
    March from cur toward other up to the segment midpoint, jumping by the
    clearance each step; the first sample inside the activation band adds its
    cost. Returns cost and exact gradients w.r.t. cur and other.
    """
    n = cur.shape[0]
    cost = np.zeros(n)
    grad_cur = np.zeros((n, 3))
    grad_other = np.zeros((n, 3))
    segment = other - cur
    length = np.linalg.norm(segment, axis=-1)
    live = np.nonzero((length > _MIN_SEGMENT) & (radii >= 0.0))[0]
    if live.size == 0:
        return cost, grad_cur, grad_other

    direction = segment[live] / length[live, None]
    half = 0.5 * length[live]
    radius = radii[live]
    origin = cur[live]
    # jump length and its gradients w.r.t. cur and other
    jump = np.where(colliding[live], radius, start_distance[live] - radius)
    jump_cur = np.where(colliding[live, None], 0.0, start_normal[live])
    jump_other = np.zeros_like(jump_cur)
    index = np.arange(live.size)

    def pullback(g, j, l, u, jc, jo):
        along = np.einsum("ni,ni->n", u, g)
        perp = g - u * along[:, None]
        scale = (j / l)[:, None]
        return g + jc * along[:, None] - scale * perp, jo * along[:, None] + scale * perp

    for _ in range(steps):
        index = index[jump[index] < half[index]]
        if index.size == 0:
            break
        u = direction[index]
        j = jump[index]
        l = 2.0 * half[index]
        sample = origin[index] + j[:, None] * u
        distance, normal, _ = box_distance(world, sample, box)
        penetration = radius[index] - distance
        hit = penetration > -eta

        if np.any(hit):
            h = index[hit]
            slope = smooth_collision_slope(penetration[hit], eta)
            g = -slope[:, None] * normal[hit]
            gc, go = pullback(g, j[hit], l[hit], u[hit], jump_cur[h], jump_other[h])
            cost[live[h]] += smooth_collision_distance(penetration[hit], eta)
            grad_cur[live[h]] += gc
            grad_other[live[h]] += go

        miss = ~hit
        m = index[miss]
        gc, go = pullback(normal[miss], j[miss], l[miss], u[miss], jump_cur[m], jump_other[m])
        jump[m] = j[miss] + distance[miss] - radius[m]
        jump_cur[m] = jump_cur[m] + gc
        jump_other[m] = jump_other[m] + go
        index = m
    return cost, grad_cur, grad_other


def swept_collision_batch(world: WorldModel, prev: NDArray, cur: NDArray, nxt: NDArray, radii: NDArray,
                          eta: float, weight: float, speed_dt: float, sweep_steps: int):
    """
    Swept cost for N spheres at their current centers, scaled by sphere speed.
    Returns (cost, grad_cur, grad_prev, grad_next), all exact.
    """
    cur = np.asarray(cur, dtype=np.float64).reshape(-1, 3)
    prev = np.asarray(prev, dtype=np.float64).reshape(-1, 3)
    nxt = np.asarray(nxt, dtype=np.float64).reshape(-1, 3)
    radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), cur.shape[:1])
    n = cur.shape[0]
    raw = np.zeros(n)
    g_cur = np.zeros((n, 3))
    g_prev = np.zeros((n, 3))
    g_next = np.zeros((n, 3))
    active = radii >= 0.0

    for box in range(world.num_boxes):
        distance, normal, _ = box_distance(world, cur, box)
        penetration = radii - distance
        colliding = active & (penetration > -eta)
        raw += np.where(colliding, smooth_collision_distance(penetration, eta), 0.0)
        g_cur -= np.where(colliding, smooth_collision_slope(penetration, eta), 0.0)[:, None] * normal
        for other, g_other in ((prev, g_prev), (nxt, g_next)):
            c, gc, go = _sweep_direction(world, box, cur, other, radii, eta, sweep_steps,
                                         distance, normal, colliding)
            raw += c
            g_cur += gc
            g_other += go

    delta = nxt - prev
    delta_norm = np.linalg.norm(delta, axis=-1)
    factor = delta_norm / (2.0 * speed_dt)
    moving = delta_norm > 0.0
    safe = np.where(moving, delta_norm, 1.0)
    d_speed = np.where(moving, 1.0, 0.0)[:, None] * delta / (safe[:, None] * 2.0 * speed_dt)

    cost = weight * factor * raw
    grad_cur = weight * factor[:, None] * g_cur
    grad_prev = weight * (factor[:, None] * g_prev - raw[:, None] * d_speed)
    grad_next = weight * (factor[:, None] * g_next + raw[:, None] * d_speed)
    return cost, grad_cur, grad_prev, grad_next


def swept_collision_cost(world: WorldModel, s_prev, s_cur, s_next, eta: float, weight: float,
                         speed_dt: float, sweep_steps: int = 4) -> CollisionQueryResult:
    """
    Spheres are (center, radius) pairs; the radius of s_cur is used for all
    three. Boundary steps pass s_prev = s_cur or s_next = s_cur.
    """
    if sweep_steps < 1 or speed_dt <= 0:
        raise ValueError("sweep_steps must be >= 1 and speed_dt > 0")
    center, radius = s_cur
    cost, grad, _, _ = swept_collision_batch(
        world, np.asarray(s_prev[0])[None], np.asarray(center)[None], np.asarray(s_next[0])[None],
        np.array([radius], dtype=np.float64), eta, weight, speed_dt, sweep_steps,
    )
    return CollisionQueryResult(float(cost[0]), grad[0])


def self_collision_batch(positions: NDArray, radii: NDArray, pairs: NDArray,
                         weight: float) -> Tuple[NDArray, NDArray]:
    """Largest pair penetration per batch row (N,) and its gradient (N, M, 3)."""
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    cost = np.zeros(n)
    gradient = np.zeros_like(positions)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0 or n == 0:
        return cost, gradient
    i, j = pairs[:, 0], pairs[:, 1]
    valid = (radii[i] > 0) & (radii[j] > 0)
    diff = positions[:, i] - positions[:, j]
    distance = np.linalg.norm(diff, axis=-1)
    penetration = np.where(valid, radii[i] + radii[j] - distance, -np.inf)
    worst = np.argmax(penetration, axis=1)
    rows = np.arange(n)
    depth = penetration[rows, worst]
    hit = depth > 0.0
    cost = weight * np.where(hit, depth, 0.0)

    d = distance[rows, worst]
    direction = diff[rows, worst] / np.where(d > 0.0, d, 1.0)[:, None]
    direction = np.where(hit[:, None], direction, 0.0)
    gradient[rows, i[worst]] -= weight * direction
    gradient[rows, j[worst]] += weight * direction
    return cost, gradient


def self_collision_cost(sphere_positions: NDArray, radii: NDArray, pairs, weight: float):
    cost, gradient = self_collision_batch(np.asarray(sphere_positions)[None], np.asarray(radii),
                                          np.asarray(pairs), weight)
    return float(cost[0]), gradient[0]


def scene_summary(world: WorldModel) -> dict:
    return {
        "obstacles": [o.name for o in world.obstacles],
        "enabled": world.num_boxes,
    }
