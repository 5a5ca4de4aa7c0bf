import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from app.config import data_dir
from app.exceptions import RobotConfigError, ShapeMismatchError
from app.robot_model import forward_kinematics, kinematics_gradient, load_robot, robot_summary, to_document
from app.utils import make_transform, quat_to_matrix


def planar_document(**changes):
    document = {
        "name": "two_link",
        "joints": [
            {"name": "j1", "kind": "revolute_z", "parent": "base", "child": "l1"},
            {"name": "j2", "kind": "revolute_z", "parent": "l1", "child": "l2", "origin": {"xyz": [1, 0, 0]}},
            {"name": "tip", "kind": "fixed", "parent": "l2", "child": "ee", "origin": {"xyz": [1, 0, 0]}},
        ],
        "limits": {"position": [[-3, 3], [-3, 3]], "velocity": [1, 1], "acceleration": [5, 5], "jerk": [50, 50]},
        "spheres": [{"link": "l1", "center": [0.5, 0, 0], "radius": 0.1},
                    {"link": "l2", "center": [0.5, 0, 0], "radius": 0.1}],
        "retract_config": [0.0, 0.5],
        "ee_link": "ee",
    }
    document.update(changes)
    return document


def sequential_chain(robot, q):
    """Independent product of per-joint matrices along the single chain."""
    transform = np.eye(4)
    for joint in robot.joints:
        motion = np.eye(4)
        if joint.actuated_index is not None:
            value = q[joint.actuated_index]
            if joint.is_revolute:
                c, s = math.cos(value), math.sin(value)
                axis = joint.axis
                k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
                motion[:3, :3] = np.eye(3) + s * k + (1 - c) * k @ k
            else:
                motion[:3, 3] = joint.axis * value
        transform = transform @ joint.fixed_transform @ motion
    return transform


class TestLoadRobot:
    def test_planar_arm_document(self):
        robot = load_robot(planar_document())
        assert robot.dof == 2
        assert robot.num_spheres == 2
        assert robot.joint_names == ("j1", "j2")

    def test_franka_like_document(self):
        robot = load_robot(data_dir() / "robots" / "franka_like.json")
        assert robot.dof == 7
        assert robot.num_spheres == 60
        assert len(robot.self_pairs) > 0

    def test_document_round_trip(self):
        robot = load_robot(data_dir() / "robots" / "franka_like.json")
        reloaded = load_robot(to_document(robot))
        q = np.random.default_rng(3).uniform(robot.lower, robot.upper, size=(4, robot.dof))
        a = forward_kinematics(robot, q)
        b = forward_kinematics(reloaded, q)
        assert np.allclose(a.sphere_positions, b.sphere_positions, atol=1e-12)
        assert np.array_equal(robot.self_pairs, reloaded.self_pairs)

    def test_unknown_joint_kind(self):
        document = planar_document()
        document["joints"][0]["kind"] = "spherical"
        with pytest.raises(RobotConfigError):
            load_robot(document)

    def test_cycle_in_chain(self):
        document = planar_document()
        document["joints"].append({"name": "loop", "kind": "fixed", "parent": "ee", "child": "base"})
        with pytest.raises(RobotConfigError):
            load_robot(document)

    def test_sphere_on_unknown_link(self):
        document = planar_document(spheres=[{"link": "nowhere", "center": [0, 0, 0], "radius": 0.1}])
        with pytest.raises(RobotConfigError):
            load_robot(document)

    def test_retract_outside_limits(self):
        with pytest.raises(RobotConfigError):
            load_robot(planar_document(retract_config=[0.0, 4.0]))

    def test_adjacent_links_excluded_from_self_pairs(self):
        robot = load_robot(planar_document())
        assert robot.self_pairs.shape == (0, 2)

    def test_summary(self):
        summary = robot_summary(load_robot(planar_document()))
        assert summary["dof"] == 2
        assert summary["joints"] == ["j1", "j2"]


class TestForwardKinematics:
    def setup_method(self):
        self.robot = load_robot(planar_document())

    def test_zero_configuration(self):
        result = forward_kinematics(self.robot, np.zeros(2))
        assert np.allclose(result.ee_position[0], [2.0, 0.0, 0.0], atol=1e-12)
        assert np.allclose(result.ee_quaternion[0], [1.0, 0.0, 0.0, 0.0], atol=1e-12)

    def test_shoulder_quarter_turn(self):
        result = forward_kinematics(self.robot, np.array([math.pi / 2, 0.0]))
        assert np.allclose(result.ee_position[0], [0.0, 2.0, 0.0], atol=1e-12)

    def test_sphere_positions_follow_links(self):
        result = forward_kinematics(self.robot, np.array([0.0, math.pi / 2]))
        assert np.allclose(result.sphere_positions[0], [[0.5, 0, 0], [1.0, 0.5, 0]], atol=1e-12)

    def test_matches_sequential_product(self):
        robot = load_robot(data_dir() / "robots" / "franka_like.json")
        q = np.random.default_rng(11).uniform(robot.lower, robot.upper, size=(8, robot.dof))
        result = forward_kinematics(robot, q)
        for b in range(q.shape[0]):
            expected = sequential_chain(robot, q[b])
            assert np.allclose(result.ee_position[b], expected[:3, 3], atol=1e-10)
            assert np.allclose(quat_to_matrix(result.ee_quaternion[b]), expected[:3, :3], atol=1e-10)

    def test_wrong_width(self):
        with pytest.raises(ShapeMismatchError):
            forward_kinematics(self.robot, np.zeros((3, 4)))


class TestKinematicsGradient:
    def setup_method(self):
        self.robot = load_robot(data_dir() / "robots" / "planar_3dof.json")
        self.rng = np.random.default_rng(5)

    def finite_difference(self, scalar, q, eps=1e-6):
        gradient = np.zeros_like(q)
        for k in range(q.shape[0]):
            step = np.zeros_like(q)
            step[k] = eps
            gradient[k] = (scalar(q + step) - scalar(q - step)) / (2 * eps)
        return gradient

    def test_ee_position_gradient(self):
        q = self.rng.uniform(-1.5, 1.5, size=3)
        d_pos = self.rng.normal(size=3)
        analytic = kinematics_gradient(self.robot, q, d_ee_pos=d_pos[None])[0]
        numeric = self.finite_difference(lambda x: forward_kinematics(self.robot, x).ee_position[0] @ d_pos, q)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_sphere_gradient(self):
        q = self.rng.uniform(-1.5, 1.5, size=3)
        d_spheres = self.rng.normal(size=(self.robot.num_spheres, 3))
        analytic = kinematics_gradient(self.robot, q, d_spheres=d_spheres[None])[0]
        numeric = self.finite_difference(
            lambda x: np.sum(forward_kinematics(self.robot, x).sphere_positions[0] * d_spheres), q)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_quaternion_gradient(self):
        q = np.array([0.3, -0.4, 0.2])
        d_quat = self.rng.normal(size=4)
        analytic = kinematics_gradient(self.robot, q, d_ee_quat=d_quat[None])[0]
        numeric = self.finite_difference(lambda x: forward_kinematics(self.robot, x).ee_quaternion[0] @ d_quat, q)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_prismatic_joint(self):
        document = planar_document()
        document["joints"][1]["kind"] = "prismatic_x"
        robot = load_robot(document)
        q = np.array([0.4, 0.2])
        d_pos = np.array([0.3, -1.0, 0.5])
        analytic = kinematics_gradient(robot, q, d_ee_pos=d_pos[None])[0]
        numeric = self.finite_difference(lambda x: forward_kinematics(robot, x).ee_position[0] @ d_pos, q)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_gradient_shape_checked(self):
        with pytest.raises(ShapeMismatchError):
            kinematics_gradient(self.robot, np.zeros(3), d_ee_pos=np.zeros((2, 3)))


class TestTransforms:
    def test_make_transform_identity(self):
        assert np.array_equal(make_transform(), np.eye(4))
