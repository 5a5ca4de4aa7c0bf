import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from app.config import MotionGenConfig, PlannerConfig, SelectionWeights, data_dir
from app.cost_rollout import RolloutProblem, make_trajectory
from app.exceptions import ProblemError, ShapeMismatchError, TrajectoryError
from app.models import WorldModel
from app.motion_gen import (
    HELD_SAMPLES,
    MIN_FINE_STEPS,
    derivative_ratio,
    final_retime,
    generate_seeds,
    interpolate,
    optimize_trajectory,
    plan_motion,
    resample_path,
    retime,
    select_best,
    solve_ik,
    solve_ik_detailed,
)
from app.robot_model import forward_kinematics, load_robot
from app.validations import validate_trajectory
from app.world_geometry import load_scene


def min_jerk(start, goal, steps):
    s = np.linspace(0.0, 1.0, steps)[:, None]
    blend = 10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5
    return start + blend * (goal - start)


def small_config(**changes):
    settings = dict(to_seeds=2, horizon=16, first_iterations=40, retime_iterations=60, retries=1, seed=0)
    settings.update(changes)
    return MotionGenConfig(**settings)


class TestResamplePath:
    def test_arc_length_spacing(self):
        path = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
        resampled = resample_path(path, 5)
        assert np.allclose(resampled, [[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1]])

    def test_duplicate_waypoints(self):
        path = np.array([[0.0, 0.0], [0.0, 0.0], [2.0, 0.0]])
        resampled = resample_path(path, 3)
        assert np.allclose(resampled, [[0, 0], [1, 0], [2, 0]])

    def test_single_point(self):
        resampled = resample_path(np.array([[0.5, -0.5]]), 4)
        assert resampled.shape == (4, 2)
        assert np.all(resampled == [0.5, -0.5])


class TestGenerateSeeds:
    def setup_method(self):
        self.robot = load_robot(data_dir() / "robots" / "planar_2dof.json")
        self.start = np.array([-1.0, 0.0])

    def test_linear_seeds_cycle_solutions(self):
        solutions = [np.array([-1.0, 1.0]), np.array([-0.5, 0.5])]
        batch = generate_seeds(self.start, solutions, "linear", 10, count=3)
        assert batch.seeds.shape == (3, 10, 2)
        assert np.all(batch.seeds[:, 0] == self.start)
        assert np.array_equal(batch.seeds[2, -1], solutions[0])
        assert not batch.fallback.any()

    def test_retract_seeds_visit_retract(self):
        goal = np.array([-1.0, 1.5])
        batch = generate_seeds(self.start, [goal], "retract", 32, robot=self.robot)
        seed = batch.seeds[0]
        assert np.array_equal(seed[0], self.start)
        assert np.array_equal(seed[-1], goal)
        assert np.min(np.linalg.norm(seed - self.robot.retract_config, axis=1)) < 0.1

    def test_retract_needs_robot(self):
        with pytest.raises(ProblemError):
            generate_seeds(self.start, [self.start], "retract", 10)

    def test_graph_seeds(self):
        world = load_scene(data_dir() / "scenes" / "planar_wall.json")
        goal = np.array([-1.5, 2.5])
        batch = generate_seeds(self.start, [goal], "graph_plan", 12, robot=self.robot, world=world,
                               planner_config=PlannerConfig(p_explore=64, k_explore=4))
        assert not batch.fallback[0]
        assert np.array_equal(batch.seeds[0, 0], self.start)
        assert np.array_equal(batch.seeds[0, -1], goal)

    def test_graph_seeds_fall_back_to_linear(self):
        world = load_scene(data_dir() / "scenes" / "planar_wall.json")
        goal = np.zeros(2)
        batch = generate_seeds(self.start, [goal], "graph_plan", 12, robot=self.robot, world=world)
        assert batch.fallback[0]
        assert np.allclose(batch.seeds[0], np.linspace(self.start, goal, 12))

    def test_unknown_mode(self):
        with pytest.raises(ProblemError):
            generate_seeds(self.start, [self.start], "spiral", 10)

    def test_no_solutions(self):
        with pytest.raises(ProblemError):
            generate_seeds(self.start, [], "linear", 10)


class TestRetiming:
    def setup_method(self):
        self.robot = load_robot(data_dir() / "robots" / "planar_2dof.json")
        self.positions = min_jerk(np.array([-1.0, 0.0]), np.array([0.5, 1.2]), 20)

    def test_retimed_ratio_is_one(self):
        trajectory = make_trajectory(self.positions, 0.25)
        dt = retime(trajectory, self.robot)
        assert dt < 0.25
        assert derivative_ratio(make_trajectory(self.positions, dt), self.robot) == pytest.approx(1.0)

    def test_stationary_trajectory_uses_minimum_scale(self):
        trajectory = make_trajectory(np.zeros((8, 2)), 0.2)
        assert derivative_ratio(trajectory, self.robot) == 0.0
        assert retime(trajectory, self.robot) == pytest.approx(0.2 * 1e-3)

    def test_single_step(self):
        with pytest.raises(TrajectoryError):
            retime(make_trajectory(np.zeros((1, 2)), 0.1), self.robot)

    def test_final_retime_respects_limits(self):
        dt, fine = final_retime(self.positions, 0.25, self.robot, 0.025)
        assert dt > 0
        assert fine.dt == 0.025
        assert derivative_ratio(fine, self.robot) <= 1.0
        report = validate_trajectory(fine.positions, fine.dt, self.robot, WorldModel(), self.positions[-1])
        assert report.ok, report.first_violation()


class TestInterpolate:
    def setup_method(self):
        self.positions = min_jerk(np.array([0.0, 0.0]), np.array([1.0, -1.0]), 11)
        self.coarse = make_trajectory(self.positions, 0.1)

    def test_samples_and_hold(self):
        fine = interpolate(self.coarse, 0.025)
        assert fine.dt == 0.025
        assert fine.num_steps == 40 + 1 + HELD_SAMPLES
        assert np.array_equal(fine.positions[0], self.positions[0])
        assert np.all(fine.positions[-HELD_SAMPLES - 1:] == self.positions[-1])

    def test_passes_through_knots(self):
        fine = interpolate(self.coarse, 0.025)
        assert np.allclose(fine.positions[:41:4], self.positions, atol=1e-12)

    def test_minimum_sample_count(self):
        fine = interpolate(self.coarse, 10.0)
        assert fine.num_steps == MIN_FINE_STEPS

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(TrajectoryError):
            interpolate(self.coarse, 0.0)


class TestSelectBest:
    def test_blended_score(self):
        candidates = [(0.001, 100.0, 2.0), (0.0, 500.0, 1.0)]
        assert select_best(candidates) == 0
        assert select_best(candidates, SelectionWeights(max_jerk=0.0)) == 1

    def test_extra_leading_fields_ignored(self):
        candidates = [("a", 0.0, 0.0, 3.0), ("b", 0.0, 0.0, 2.0)]
        assert select_best(candidates) == 1

    def test_empty(self):
        with pytest.raises(TrajectoryError):
            select_best([])


class TestSolveIk:
    def setup_method(self):
        self.robot = load_robot(data_dir() / "robots" / "planar_3dof.json")
        self.config = MotionGenConfig(seed=0)

    def test_solutions_reach_goal(self):
        goal = forward_kinematics(self.robot, np.array([0.3, 0.5, -0.4])).ee_pose(0)
        solutions = solve_ik_detailed(self.robot, WorldModel(), goal, 8, self.config)
        assert len(solutions) >= 1
        scores = [s.score for s in solutions]
        assert scores == sorted(scores)
        for solution in solutions:
            reached = forward_kinematics(self.robot, solution.q).ee_position[0]
            assert np.linalg.norm(reached - goal.position) < self.config.position_threshold
            assert solution.orientation_error <= self.config.rotation_threshold

    def test_needs_a_seed(self):
        goal = forward_kinematics(self.robot, np.zeros(3)).ee_pose(0)
        with pytest.raises(ProblemError):
            solve_ik_detailed(self.robot, WorldModel(), goal, 0, self.config)

    def test_plain_solutions_match_ranked(self):
        goal = forward_kinematics(self.robot, np.array([0.3, 0.5, -0.4])).ee_pose(0)
        plain = solve_ik(self.robot, WorldModel(), goal, 8, config=self.config)
        ranked = solve_ik_detailed(self.robot, WorldModel(), goal, 8, self.config)
        assert len(plain) == len(ranked)
        assert all(np.array_equal(q, s.q) for q, s in zip(plain, ranked))


class TestOptimizeTrajectory:
    def setup_method(self):
        self.robot = load_robot(data_dir() / "robots" / "planar_2dof.json")
        self.world = load_scene(data_dir() / "scenes" / "planar_wall.json")
        self.start = np.array([-1.0, 0.0])
        self.config = small_config()
        self.problem = RolloutProblem(self.robot, self.world, self.start, np.array([-1.0, 1.0]),
                                      mode="cspace_goal", weights=self.config.weights.scaled_for_dt(self.config.dt_init),
                                      dt=self.config.dt_init, horizon=16)

    def test_linear_seeds(self):
        seeds = generate_seeds(self.start, [np.array([-1.0, 1.0])], "linear", 16, count=2).seeds
        result = optimize_trajectory(self.problem, seeds, 40, self.config)
        assert result.positions.shape == (2, 16, 2)
        assert result.costs.shape == (2,)
        assert np.all(result.positions[:, :3] == self.start)
        assert np.array_equal(result.positions[:, -4], result.positions[:, -1])
        assert result.feasible.any()
        assert result.dt == self.config.dt_init

    def test_seed_shape(self):
        with pytest.raises(ShapeMismatchError):
            optimize_trajectory(self.problem, np.zeros((2, 12, 2)), 5, self.config)


class TestPlanMotion:
    def setup_method(self):
        self.robot = load_robot(data_dir() / "robots" / "planar_2dof.json")
        self.world = load_scene(data_dir() / "scenes" / "planar_wall.json")
        self.start = np.array([-1.0, 0.0])
        self.goal = np.array([-1.0, 1.0])

    def test_invalid_start(self):
        result = plan_motion(self.robot, self.world, np.zeros(2), self.goal, small_config())
        assert not result.success
        assert result.failure_reason == "invalid_start"

    def test_goal_in_collision(self):
        result = plan_motion(self.robot, self.world, self.start, np.zeros(2), small_config())
        assert not result.success
        assert result.failure_reason == "no_ik"

    def test_start_shape(self):
        with pytest.raises(ShapeMismatchError):
            plan_motion(self.robot, self.world, np.zeros(3), self.goal, small_config())

    def test_configuration_goal(self):
        config = small_config()
        result = plan_motion(self.robot, self.world, self.start, self.goal, config, execution=True)
        assert result.success, result.diagnostics
        assert result.diagnostics["attempts"] == ["linear"]
        trajectory = result.trajectory
        assert trajectory.dt == config.interpolation_dt
        assert np.array_equal(trajectory.positions[0], self.start)
        assert np.max(np.abs(trajectory.positions[-1] - self.goal)) <= config.position_threshold
        report = validate_trajectory(trajectory.positions, trajectory.dt, self.robot, self.world, self.goal)
        assert report.ok, report.first_violation()
        assert result.metrics["motion_time"] == pytest.approx(trajectory.motion_time)
        assert result.execution_trajectory.dt == config.execution_dt
        assert set(result.diagnostics["timings"]) >= {"ik", "trajopt", "retime", "total"}

    def test_deterministic(self):
        config = small_config(seed=4)
        first = plan_motion(self.robot, self.world, self.start, self.goal, config)
        second = plan_motion(self.robot, self.world, self.start, self.goal, config)
        assert first.success and second.success
        assert np.array_equal(first.trajectory.positions, second.trajectory.positions)
        assert first.dt_final == second.dt_final
