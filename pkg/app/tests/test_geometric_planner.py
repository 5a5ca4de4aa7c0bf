import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from app.config import PlannerConfig, data_dir
from app.exceptions import ShapeMismatchError
from app.geometric_planner import (
    InformedSampler,
    PlanGraph,
    check_edge,
    mask_samples,
    parallel_steer,
    path_length,
    plan,
    shortcut_path,
    shortest_path,
)
from app.models import WorldModel
from app.robot_model import forward_kinematics, load_robot
from app.utils import halton_samples
from app.world_geometry import load_scene, signed_distance_point

START = np.array([-1.0, 0.0])
GOAL = np.array([1.0, 0.0])


def one_at_a_time_valid(robot, world, q):
    if np.any(q < robot.lower) or np.any(q > robot.upper):
        return False
    spheres = forward_kinematics(robot, q).sphere_positions[0]
    for center, radius in zip(spheres, robot.sphere_radii):
        if signed_distance_point(world, center)[0] - radius < 0.0:
            return False
    for i, j in robot.self_pairs:
        if np.linalg.norm(spheres[i] - spheres[j]) < robot.sphere_radii[i] + robot.sphere_radii[j]:
            return False
    return True


class TestPlanGraph:
    def test_vertices_deduplicated(self):
        graph = PlanGraph(2)
        a = graph.add_vertex([0.0, 1.0])
        b = graph.add_vertex(np.array([0.0, 1.0]))
        assert a == b
        assert len(graph) == 1
        assert graph.find([0.0, 1.0]) == a

    def test_edges_are_symmetric(self):
        graph = PlanGraph(2)
        a, b = graph.add_vertex([0.0, 0.0]), graph.add_vertex([3.0, 4.0])
        assert graph.add_edge(a, b) == pytest.approx(5.0)
        assert graph.edges[b][a] == pytest.approx(5.0)
        assert graph.add_edge(a, a) is None
        graph.remove_edge(b, a)
        assert graph.num_edges() == 0

    def test_diamond_shortest_path(self):
        graph = PlanGraph(2)
        ids = [graph.add_vertex(q) for q in ([0, 0], [1, 1], [1, -0.5], [2, 0])]
        for a, b in ((0, 1), (1, 3), (0, 2), (2, 3)):
            graph.add_edge(ids[a], ids[b])
        result = shortest_path(graph, ids[0], ids[3])
        assert result.found
        assert result.path == [ids[0], ids[2], ids[3]]
        assert result.length == pytest.approx(2 * np.sqrt(1.25))

    def test_disconnected(self):
        graph = PlanGraph(2)
        a, b = graph.add_vertex([0, 0]), graph.add_vertex([1, 1])
        result = shortest_path(graph, a, b)
        assert not result.found
        assert result.path == []

    def test_nearest_excludes(self):
        graph = PlanGraph(1)
        for value in (0.0, 0.5, 2.0, 3.0):
            graph.add_vertex([value])
        assert graph.nearest(np.array([0.4]), 2, exclude=(1,)) == [0, 2]


class TestCollisionMask:
    def test_matches_sequential_oracle(self):
        robot = load_robot(data_dir() / "robots" / "planar_3dof.json")
        world = load_scene(data_dir() / "scenes" / "shelf_slot.json")
        configs = halton_samples(100, robot.lower, robot.upper, seed=4)
        mask = mask_samples(robot, world, configs, chunk_size=16)
        expected = [one_at_a_time_valid(robot, world, q) for q in configs]
        assert mask.tolist() == expected
        assert 0 < mask.sum() < 100

    def test_out_of_limits(self):
        robot = load_robot(data_dir() / "robots" / "planar_2dof.json")
        assert not mask_samples(robot, WorldModel(), np.array([[3.2, 0.0]]))[0]


class TestSteering:
    def setup_method(self):
        self.robot = load_robot(data_dir() / "robots" / "planar_2dof.json")
        self.world = load_scene(data_dir() / "scenes" / "planar_wall.json")
        self.config = PlannerConfig()

    def test_free_edge_reaches_target(self):
        graph = PlanGraph(2)
        source = graph.add_vertex(START)
        target = np.array([-1.0, 1.0])
        outcome = parallel_steer(graph, self.robot, self.world, [(source, target)], self.config)[0]
        assert outcome.reached
        assert outcome.fraction == 1.0
        assert np.array_equal(graph.vertices[outcome.vertex], target)

    def test_wall_truncates_edge(self):
        graph = PlanGraph(2)
        source = graph.add_vertex(START)
        outcome = parallel_steer(graph, self.robot, self.world, [(source, GOAL)], self.config)[0]
        assert not outcome.reached
        assert 0.0 < outcome.fraction < 1.0
        reached = graph.vertices[outcome.vertex]
        assert START[0] < reached[0] < 0.0
        assert graph.edges[source][outcome.vertex] < np.linalg.norm(GOAL - START)
        steps = 21
        fraction = np.linspace(0.0, 1.0, steps)
        index = int(round(outcome.fraction * (steps - 1)))
        waypoints = START + fraction[:, None] * (GOAL - START)
        assert np.array_equal(waypoints[index], reached)
        assert mask_samples(self.robot, self.world, waypoints[:index + 1]).all()
        assert not mask_samples(self.robot, self.world, waypoints[index + 1:index + 2])[0]

    def test_batch_shares_step_count(self):
        graph = PlanGraph(2)
        source = graph.add_vertex(START)
        outcomes = parallel_steer(graph, self.robot, self.world,
                                  [(source, GOAL), (source, np.array([-1.0, 0.5]))], self.config)
        assert not outcomes[0].reached
        assert outcomes[1].reached
        assert graph.num_edges() == 2

    def test_check_edge(self):
        assert not check_edge(self.robot, self.world, START, GOAL, 0.01)
        assert check_edge(self.robot, self.world, START, np.array([-1.0, 1.0]), 0.01)
        assert not check_edge(self.robot, self.world, START, np.array([-1.0, 2.0]), 0.01)


class TestShortcut:
    def setup_method(self):
        self.robot = load_robot(data_dir() / "robots" / "planar_2dof.json")
        self.world = load_scene(data_dir() / "scenes" / "planar_wall.json")
        self.config = PlannerConfig()

    def test_collinear_waypoints_removed(self):
        path = np.array([[0.0, 0.0], [0.25, 0.25], [0.5, 0.5], [1.0, 1.0]])
        result = shortcut_path(self.robot, WorldModel(), path, self.config)
        assert np.array_equal(result, [[0.0, 0.0], [1.0, 1.0]])

    def test_detour_never_grows(self):
        # folded elbow keeps the forearm short of the wall
        path = np.array([START, [-1.5, 0.0], [-1.5, 2.5], [1.5, 2.5], [1.5, 0.0], GOAL])
        weights = np.ones(2)
        result = shortcut_path(self.robot, self.world, path, self.config)
        assert path_length(result, weights) <= path_length(path, weights)
        assert np.array_equal(result[0], START)
        assert np.array_equal(result[-1], GOAL)
        resolution = self.config.steer_resolution / self.config.dense_factor
        for a, b in zip(result[:-1], result[1:]):
            assert check_edge(self.robot, self.world, a, b, resolution)


class TestInformedSampler:
    def test_samples_inside_ellipse_and_limits(self):
        lower, upper = np.array([-3.0, -3.0]), np.array([3.0, 3.0])
        sampler = InformedSampler(START, GOAL, lower, upper, np.ones(2), seed=1)
        samples = sampler.sample(200, 3.0)
        assert samples.shape == (200, 2)
        total = np.linalg.norm(samples - START, axis=1) + np.linalg.norm(samples - GOAL, axis=1)
        assert np.all(total <= 3.0 + 1e-9)
        assert np.all((samples >= lower) & (samples <= upper))

    def test_budget_below_focal_distance(self):
        sampler = InformedSampler(START, GOAL, np.full(2, -3.0), np.full(2, 3.0), np.ones(2), seed=1)
        samples = sampler.sample(10, 1.0)
        assert np.allclose(samples[:, 1], 0.0)


class TestPlan:
    def setup_method(self):
        self.robot = load_robot(data_dir() / "robots" / "planar_2dof.json")
        self.world = load_scene(data_dir() / "scenes" / "planar_wall.json")

    def test_path_around_wall(self):
        config = PlannerConfig(p_explore=256, k_explore=8, c_default=2.5, seed=3)
        result = plan(self.robot, self.world, START[None], GOAL[None], config)[0]
        assert result.found
        assert np.array_equal(result.path[0], START)
        assert np.array_equal(result.path[-1], GOAL)
        resolution = config.steer_resolution / config.dense_factor
        for a, b in zip(result.path[:-1], result.path[1:]):
            assert check_edge(self.robot, self.world, a, b, resolution)
        assert result.length == pytest.approx(path_length(result.path, np.ones(2)))

    def test_deterministic_for_seed(self):
        config = PlannerConfig(p_explore=256, k_explore=8, c_default=2.5, seed=5)
        first = plan(self.robot, self.world, START[None], GOAL[None], config)[0]
        second = plan(self.robot, self.world, START[None], GOAL[None], config)[0]
        assert first.found == second.found
        assert np.array_equal(first.path, second.path)

    def test_free_direct_connection(self):
        goal = np.array([-1.0, 1.0])
        result = plan(self.robot, self.world, START[None], goal[None])[0]
        assert result.found
        assert np.array_equal(result.path, [START, goal])

    def test_invalid_start(self):
        result = plan(self.robot, self.world, np.zeros((1, 2)), GOAL[None])[0]
        assert not result.found
        assert result.diagnostic == "invalid start"

    def test_shared_graph_batch(self):
        starts = np.array([START, [-1.5, 0.0]])
        goals = np.array([[-1.0, 0.5], [-1.5, 2.5]])
        results = plan(self.robot, self.world, starts, goals)
        assert all(r.found for r in results)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            plan(self.robot, self.world, np.zeros((2, 2)), np.zeros((1, 2)))
