"""
Batched sampling-based planner over joint space.

A shared roadmap is grown in batches: heuristic direct and retract
connections first, then informed samples steered toward their nearest
roadmap vertices. Steering validates every waypoint of a batch in one
collision query and keeps the last valid waypoint of each edge.
"""
from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.stats import qmc

from .config import PlannerConfig
from .data_structures import PathResult, PlanResult
from .exceptions import ShapeMismatchError
from .logger_service import LoggerService
from .models import RobotModel, WorldModel
from .robot_model import forward_kinematics
from .world_geometry import self_collision_batch, signed_distance_batch

logger = LoggerService(__name__)

# candidate draws per informed-sampling round, relative to the requested count
_DRAW_FACTOR = 8
_MAX_DRAW_ROUNDS = 32


def joint_weights(config: PlannerConfig, dof: int) -> NDArray:
    if config.joint_weights is None:
        return np.ones(dof)
    weights = np.asarray(config.joint_weights, dtype=np.float64)
    if weights.shape != (dof,):
        raise ShapeMismatchError("planner joint weights", (dof,), weights.shape)
    return weights


def weighted_distance(a: NDArray, b: NDArray, weights: NDArray) -> NDArray:
    return np.linalg.norm((np.asarray(b) - np.asarray(a)) * weights, axis=-1)


def path_length(path: NDArray, weights: NDArray) -> float:
    path = np.asarray(path, dtype=np.float64)
    if path.shape[0] < 2:
        return 0.0
    return float(np.sum(weighted_distance(path[:-1], path[1:], weights)))


class PlanGraph:
    """Undirected roadmap; vertices are deduplicated by their exact bytes."""

    def __init__(self, dof: int, weights: Optional[NDArray] = None):
        self.dof = dof
        self.weights = np.ones(dof) if weights is None else np.asarray(weights, dtype=np.float64)
        self.vertices: List[NDArray] = []
        self.edges: Dict[int, Dict[int, float]] = defaultdict(dict)
        self._index: Dict[bytes, int] = {}
        self._array: Optional[NDArray] = None

    def __len__(self):
        return len(self.vertices)

    def add_vertex(self, q: NDArray) -> int:
        q = np.array(q, dtype=np.float64).reshape(self.dof)
        key = q.tobytes()
        if key in self._index:
            return self._index[key]
        self.vertices.append(q)
        self._index[key] = len(self.vertices) - 1
        self._array = None
        return len(self.vertices) - 1

    def find(self, q: NDArray) -> Optional[int]:
        return self._index.get(np.asarray(q, dtype=np.float64).tobytes())

    def add_edge(self, a: int, b: int) -> Optional[float]:
        if a == b:
            return None
        weight = float(weighted_distance(self.vertices[a], self.vertices[b], self.weights))
        if weight <= 0.0:
            return None
        self.edges[a][b] = weight
        self.edges[b][a] = weight
        return weight

    def remove_edge(self, a: int, b: int):
        self.edges[a].pop(b, None)
        self.edges[b].pop(a, None)

    def array(self) -> NDArray:
        if self._array is None:
            self._array = np.array(self.vertices).reshape(-1, self.dof)
        return self._array

    def nearest(self, q: NDArray, k: int, exclude: Sequence[int] = ()) -> List[int]:
        distance = weighted_distance(self.array(), q, self.weights)
        order = np.argsort(distance, kind="stable")
        skip = set(exclude)
        return [int(i) for i in order if int(i) not in skip][:k]

    def num_edges(self) -> int:
        return sum(len(v) for v in self.edges.values()) // 2


def mask_samples(robot: RobotModel, world: WorldModel, configs: NDArray, margin: float = 0.0,
                 chunk_size: int = 4096) -> NDArray:
    """True where a configuration is in limits, free of self-collision and clear of the world."""
    configs = np.asarray(configs, dtype=np.float64).reshape(-1, robot.dof)
    valid = np.zeros(configs.shape[0], dtype=bool)
    active = robot.sphere_radii >= 0.0
    for begin in range(0, configs.shape[0], chunk_size):
        chunk = configs[begin:begin + chunk_size]
        ok = robot.within_limits(chunk) & np.all(np.isfinite(chunk), axis=-1)
        if robot.num_spheres:
            spheres = forward_kinematics(robot, chunk).sphere_positions
            self_cost, _ = self_collision_batch(spheres, robot.sphere_radii, robot.self_pairs, 1.0)
            ok &= self_cost <= 0.0
            if world.num_boxes:
                distance, _ = signed_distance_batch(world, spheres.reshape(-1, 3))
                clearance = distance.reshape(chunk.shape[0], -1) - robot.sphere_radii
                ok &= np.all((clearance >= margin) | ~active, axis=-1)
        valid[begin:begin + chunk_size] = ok
    return valid


def _steps_for(starts: NDArray, ends: NDArray, resolution: float, weights: NDArray) -> int:
    distance = weighted_distance(starts, ends, weights)
    longest = float(np.max(distance)) if distance.size else 0.0
    return max(2, int(math.ceil(longest / resolution)) + 1)


def _discretize(starts: NDArray, ends: NDArray, steps: int) -> NDArray:
    fraction = np.linspace(0.0, 1.0, steps)[None, :, None]
    waypoints = starts[:, None, :] + fraction * (ends - starts)[:, None, :]
    waypoints[:, 0] = starts
    waypoints[:, -1] = ends
    return waypoints


def edges_valid(robot: RobotModel, world: WorldModel, starts: NDArray, ends: NDArray, resolution: float,
                weights: Optional[NDArray] = None, margin: float = 0.0, chunk_size: int = 4096) -> NDArray:
    """Validate straight segments densely, sharing one step count across the batch."""
    starts = np.asarray(starts, dtype=np.float64).reshape(-1, robot.dof)
    ends = np.asarray(ends, dtype=np.float64).reshape(-1, robot.dof)
    if starts.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    weights = np.ones(robot.dof) if weights is None else weights
    steps = _steps_for(starts, ends, resolution, weights)
    waypoints = _discretize(starts, ends, steps)
    mask = mask_samples(robot, world, waypoints.reshape(-1, robot.dof), margin, chunk_size)
    return np.all(mask.reshape(starts.shape[0], steps), axis=1)


def check_edge(robot: RobotModel, world: WorldModel, a: NDArray, b: NDArray, resolution: float,
               weights: Optional[NDArray] = None, margin: float = 0.0) -> bool:
    return bool(edges_valid(robot, world, a, b, resolution, weights, margin)[0])


@dataclass
class SteerOutcome:
    vertex: Optional[int]
    reached: bool
    fraction: float


def parallel_steer(graph: PlanGraph, robot: RobotModel, world: WorldModel,
                   edge_batch: Sequence[Tuple[int, NDArray]], config: PlannerConfig,
                   steps: Optional[int] = None) -> List[SteerOutcome]:
    """
    Steer each (source vertex, target configuration) pair and add the last
    valid waypoint with its edge. Edges share the step count of the longest one.
    """
    if not edge_batch:
        return []
    starts = np.array([graph.vertices[src] for src, _ in edge_batch])
    ends = np.array([np.asarray(dst, dtype=np.float64) for _, dst in edge_batch])
    if steps is None:
        steps = _steps_for(starts, ends, config.steer_resolution, graph.weights)
    waypoints = _discretize(starts, ends, steps)
    mask = mask_samples(robot, world, waypoints.reshape(-1, robot.dof), config.collision_margin,
                        config.chunk_size).reshape(len(edge_batch), steps)

    outcomes = []
    for e, (src, _) in enumerate(edge_batch):
        invalid = np.nonzero(~mask[e])[0]
        last = steps - 1 if invalid.size == 0 else int(invalid[0]) - 1
        if last <= 0:
            outcomes.append(SteerOutcome(None, False, 0.0))
            continue
        vertex = graph.add_vertex(waypoints[e, last])
        graph.add_edge(src, vertex)
        outcomes.append(SteerOutcome(vertex, invalid.size == 0, last / (steps - 1)))
    return outcomes


def shortest_path(graph: PlanGraph, a: int, b: int) -> PathResult:
    """Dijkstra over edge weights; ties settle on the lower vertex index."""
    if a == b:
        return PathResult(True, [a], 0.0)
    distance = {a: 0.0}
    came_from: Dict[int, int] = {}
    open_set = [(0.0, a)]
    settled = set()
    while open_set:
        cost, current = heapq.heappop(open_set)
        if current in settled:
            continue
        settled.add(current)
        if current == b:
            path = [current]
            while current in came_from:
                current = came_from[current]
                path.append(current)
            return PathResult(True, list(reversed(path)), cost)
        for neighbor in sorted(graph.edges.get(current, {})):
            tentative = cost + graph.edges[current][neighbor]
            if tentative < distance.get(neighbor, math.inf):
                distance[neighbor] = tentative
                came_from[neighbor] = current
                heapq.heappush(open_set, (tentative, neighbor))
    return PathResult(False, [], math.inf)


def shortcut_path(robot: RobotModel, world: WorldModel, path: NDArray, config: PlannerConfig) -> NDArray:
    """Splice out waypoints wherever a later waypoint is directly reachable."""
    path = np.array(path, dtype=np.float64)
    weights = joint_weights(config, robot.dof)
    resolution = config.steer_resolution / config.dense_factor
    improved = True
    while improved and path.shape[0] > 2:
        improved = False
        i = 0
        while i < path.shape[0] - 2:
            targets = np.arange(path.shape[0] - 1, i + 1, -1)
            ok = edges_valid(robot, world, np.repeat(path[i:i + 1], targets.size, axis=0), path[targets],
                             resolution, weights, config.collision_margin, config.chunk_size)
            if np.any(ok):
                j = int(targets[np.argmax(ok)])
                path = np.concatenate([path[:i + 1], path[j:]])
                improved = True
            i += 1
    return path


class InformedSampler:
    """
    Uniform samples inside the prolate hyperellipsoid with foci at start and
    goal, by rejection from a scrambled Halton sequence over the unit cube.
    """

    def __init__(self, start: NDArray, goal: NDArray, lower: NDArray, upper: NDArray,
                 weights: NDArray, seed: int = 0):
        self.start = np.asarray(start, dtype=np.float64)
        self.goal = np.asarray(goal, dtype=np.float64)
        self.lower, self.upper, self.weights = lower, upper, weights
        self.dof = self.start.shape[0]
        self.center = 0.5 * (self.start + self.goal) * weights
        axis = (self.goal - self.start) * weights
        self.c_min = float(np.linalg.norm(axis))
        self.rotation = self._householder(axis)
        self.sampler = qmc.Halton(d=self.dof, scramble=True, seed=seed)

    def _householder(self, axis: NDArray) -> NDArray:
        """Orthogonal map taking the first basis vector to the start-goal direction."""
        e1 = np.zeros(self.dof)
        e1[0] = 1.0
        if self.c_min <= 0.0:
            return np.eye(self.dof)
        v = e1 - axis / self.c_min
        norm = float(v @ v)
        if norm < 1e-24:
            return np.eye(self.dof)
        return np.eye(self.dof) - 2.0 * np.outer(v, v) / norm

    def sample(self, count: int, c_max: float) -> NDArray:
        c_max = max(c_max, self.c_min)
        radii = np.full(self.dof, 0.5 * math.sqrt(max(c_max ** 2 - self.c_min ** 2, 0.0)))
        radii[0] = 0.5 * c_max
        accepted = []
        total = 0
        for _ in range(_MAX_DRAW_ROUNDS):
            if total >= count:
                break
            cube = 2.0 * self.sampler.random(_DRAW_FACTOR * max(count, 1)) - 1.0
            ball = cube[np.sum(cube ** 2, axis=1) <= 1.0]
            points = (self.center + (ball * radii) @ self.rotation.T) / self.weights
            points = points[np.all((points >= self.lower) & (points <= self.upper), axis=1)]
            accepted.append(points)
            total += points.shape[0]
        if not accepted:
            return np.zeros((0, self.dof))
        return np.concatenate(accepted)[:count]


@dataclass
class _Query:
    start: int
    goal: int
    sampler: InformedSampler
    c_max: float
    p_n: int
    k_n: int
    path: Optional[NDArray] = None
    length: float = math.inf
    diagnostic: str = ""


def _resolve(graph: PlanGraph, robot: RobotModel, world: WorldModel, query: _Query,
             config: PlannerConfig) -> Optional[NDArray]:
    """Shortest path whose edges also pass the dense check; failing edges leave the graph."""
    resolution = config.steer_resolution / config.dense_factor
    while True:
        result = shortest_path(graph, query.start, query.goal)
        if not result.found:
            return None
        path = np.array([graph.vertices[v] for v in result.path])
        if path.shape[0] < 2:
            return path
        ok = np.array([
            check_edge(robot, world, path[k], path[k + 1], resolution, graph.weights, config.collision_margin)
            for k in range(path.shape[0] - 1)
        ])
        if np.all(ok):
            return path
        for k in np.nonzero(~ok)[0]:
            graph.remove_edge(result.path[k], result.path[k + 1])
        logger.debug(f"[PLANNER] removed {int(np.sum(~ok))} edges failing dense revalidation")


def _accept(robot: RobotModel, world: WorldModel, query: _Query, path: NDArray, config: PlannerConfig):
    path = shortcut_path(robot, world, path, config)
    length = path_length(path, query.sampler.weights)
    if length < query.length:
        query.path, query.length = path, length


def _explore(graph: PlanGraph, robot: RobotModel, world: WorldModel, query: _Query, count: int,
             k: int, c_max: float, config: PlannerConfig) -> int:
    samples = query.sampler.sample(count, c_max)
    if samples.shape[0] == 0:
        return 0
    samples = samples[mask_samples(robot, world, samples, config.collision_margin, config.chunk_size)]
    added = [graph.add_vertex(q) for q in samples]
    batch = []
    for vertex in added:
        for neighbor in graph.nearest(graph.vertices[vertex], k, exclude=(vertex,)):
            batch.append((vertex, graph.vertices[neighbor]))
    parallel_steer(graph, robot, world, batch, config)
    return len(added)


def plan(robot: RobotModel, world: WorldModel, starts: NDArray, goals: NDArray,
         config: Optional[PlannerConfig] = None) -> List[PlanResult]:
    config = config or PlannerConfig()
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    goals = np.atleast_2d(np.asarray(goals, dtype=np.float64))
    if starts.shape != goals.shape or starts.shape[1] != robot.dof:
        raise ShapeMismatchError("planner starts/goals", ("B", robot.dof), (starts.shape, goals.shape))
    weights = joint_weights(config, robot.dof)
    rng = np.random.default_rng(config.seed)
    graph = PlanGraph(robot.dof, weights)

    start_ok = mask_samples(robot, world, starts, config.collision_margin)
    goal_ok = mask_samples(robot, world, goals, config.collision_margin)
    queries: List[Optional[_Query]] = []
    results: List[Optional[PlanResult]] = [None] * starts.shape[0]
    for b in range(starts.shape[0]):
        if not start_ok[b] or not goal_ok[b]:
            reason = "invalid start" if not start_ok[b] else "invalid goal"
            results[b] = PlanResult(False, diagnostic=reason)
            queries.append(None)
            continue
        sampler = InformedSampler(starts[b], goals[b], robot.lower, robot.upper, weights,
                                  seed=int(rng.integers(2 ** 31)))
        queries.append(_Query(
            start=graph.add_vertex(starts[b]), goal=graph.add_vertex(goals[b]), sampler=sampler,
            c_max=config.c_default * sampler.c_min, p_n=config.p_explore, k_n=config.k_explore,
        ))

    # heuristic phase: direct and through-retract connections
    live = [b for b, q in enumerate(queries) if q is not None]
    batch = []
    retract_ok = bool(mask_samples(robot, world, robot.retract_config[None], config.collision_margin)[0])
    for b in live:
        q = queries[b]
        batch.append((q.start, graph.vertices[q.goal]))
        if retract_ok:
            batch.append((q.start, robot.retract_config))
            batch.append((q.goal, robot.retract_config))
    parallel_steer(graph, robot, world, batch, config)
    for b in live:
        path = _resolve(graph, robot, world, queries[b], config)
        if path is not None:
            _accept(robot, world, queries[b], path, config)
    logger.debug(f"[PLANNER] heuristic phase solved {sum(queries[b].path is not None for b in live)}/{len(live)}")

    for iteration in range(config.g_max):
        unsolved = [b for b in live if queries[b].path is None]
        if not unsolved:
            break
        chosen = unsolved[int(rng.integers(len(unsolved)))]
        query = queries[chosen]
        added = _explore(graph, robot, world, query, query.p_n, query.k_n, query.c_max, config)
        for b in unsolved:
            path = _resolve(graph, robot, world, queries[b], config)
            if path is not None:
                _accept(robot, world, queries[b], path, config)
        if query.path is None:
            query.c_max += query.sampler.c_min * config.explore_growth
            query.p_n = int(math.ceil(query.p_n * (1.0 + config.explore_growth)))
            query.k_n = int(math.ceil(query.k_n * (1.0 + config.explore_growth)))
        logger.debug(f"[PLANNER] iteration {iteration + 1}: problem {chosen}, {added} new vertices, "
                     f"graph {len(graph)} vertices / {graph.num_edges()} edges")

    # refinement: informed samples bounded by the current best length
    for b in live:
        query = queries[b]
        for _ in range(config.g_refine):
            if query.path is None or query.path.shape[0] <= 2:
                break
            _explore(graph, robot, world, query, config.p_refine, config.k_refine, query.length, config)
            path = _resolve(graph, robot, world, query, config)
            if path is not None:
                _accept(robot, world, query, path, config)

    for b in live:
        query = queries[b]
        if query.path is None:
            results[b] = PlanResult(False, diagnostic="planner budget exhausted")
        else:
            results[b] = PlanResult(True, query.path, query.length)
    found = sum(r.found for r in results)
    logger.info(f"[PLANNER] solved {found}/{len(results)} problems with {len(graph)} vertices")
    return results
