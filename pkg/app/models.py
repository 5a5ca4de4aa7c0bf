from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .exceptions import RobotConfigError, SceneConfigError
from .utils import canonical_quat, quat_to_matrix

JOINT_KINDS = (
    "fixed",
    "prismatic_x", "prismatic_y", "prismatic_z",
    "revolute_x", "revolute_y", "revolute_z",
)

_AXES = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0]), "z": np.array([0.0, 0.0, 1.0])}


@dataclass(frozen=True, eq=False)
class JointSpec:
    name: str
    kind: str
    fixed_transform: NDArray
    parent_link_index: int
    actuated_index: Optional[int] = None
    child_link_name: str = ""

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise RobotConfigError(f"Joint '{self.name}' has unsupported kind '{self.kind}'")
        transform = np.asarray(self.fixed_transform, dtype=np.float64)
        if transform.shape != (4, 4):
            raise RobotConfigError(f"Joint '{self.name}' fixed transform must be 4x4")
        rotation = transform[:3, :3]
        if np.max(np.abs(rotation @ rotation.T - np.eye(3))) > 1e-6:
            raise RobotConfigError(f"Joint '{self.name}' fixed transform rotation is not orthonormal")
        if self.kind == "fixed" and self.actuated_index is not None:
            raise RobotConfigError(f"Fixed joint '{self.name}' cannot be actuated")
        if self.kind != "fixed" and self.actuated_index is None:
            raise RobotConfigError(f"Joint '{self.name}' needs an actuated index")
        object.__setattr__(self, "fixed_transform", transform)

    @property
    def is_revolute(self) -> bool:
        return self.kind.startswith("revolute")

    @property
    def is_prismatic(self) -> bool:
        return self.kind.startswith("prismatic")

    @property
    def axis(self) -> NDArray:
        if self.kind == "fixed":
            return np.zeros(3)
        return _AXES[self.kind[-1]].copy()


@dataclass(frozen=True, eq=False)
class RobotModel:
    """
    Kinematic chain with collision spheres. Link 0 is the base; joint j moves
    link j + 1 relative to link parent_link_index.
    """
    name: str
    link_names: Tuple[str, ...]
    joints: Tuple[JointSpec, ...]
    position_limits: NDArray
    velocity_limits: NDArray
    acceleration_limits: NDArray
    jerk_limits: NDArray
    sphere_links: NDArray
    sphere_centers: NDArray
    sphere_radii: NDArray
    self_pairs: NDArray
    ee_link_index: int
    retract_config: NDArray
    ancestors: NDArray = field(init=False, repr=False)

    def __post_init__(self):
        as_float = lambda a: np.array(a, dtype=np.float64)
        object.__setattr__(self, "position_limits", as_float(self.position_limits).reshape(-1, 2))
        for name in ("velocity_limits", "acceleration_limits", "jerk_limits", "sphere_radii", "retract_config"):
            object.__setattr__(self, name, as_float(self.__getattribute__(name)).reshape(-1))
        object.__setattr__(self, "sphere_centers", as_float(self.sphere_centers).reshape(-1, 3))
        object.__setattr__(self, "sphere_links", np.array(self.sphere_links, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "self_pairs", np.array(self.self_pairs, dtype=np.int64).reshape(-1, 2))
        self._validate()

        # ancestors[l, k] is True when actuated joint k moves link l
        ancestors = np.zeros((self.num_links, self.dof), dtype=bool)
        for index, joint in enumerate(self.joints):
            child = index + 1
            ancestors[child] = ancestors[joint.parent_link_index]
            if joint.actuated_index is not None:
                ancestors[child, joint.actuated_index] = True
        object.__setattr__(self, "ancestors", ancestors)

    def _validate(self):
        dof = self.dof
        if len(self.link_names) != len(self.joints) + 1:
            raise RobotConfigError("Every joint must create exactly one child link")
        actuated = sorted(j.actuated_index for j in self.joints if j.actuated_index is not None)
        if actuated != list(range(dof)):
            raise RobotConfigError("Actuated indices must be unique and contiguous from 0")
        for index, joint in enumerate(self.joints):
            if not 0 <= joint.parent_link_index <= index:
                raise RobotConfigError(f"Joint '{joint.name}' is not topologically sorted")
        for label, values in (
            ("velocity_limits", self.velocity_limits),
            ("acceleration_limits", self.acceleration_limits),
            ("jerk_limits", self.jerk_limits),
            ("retract_config", self.retract_config),
        ):
            if values.shape != (dof,):
                raise RobotConfigError(f"{label} must have {dof} entries, got {values.shape[0]}")
        if self.position_limits.shape != (dof, 2):
            raise RobotConfigError(f"position limits must have {dof} pairs")
        if np.any(self.position_limits[:, 0] >= self.position_limits[:, 1]):
            raise RobotConfigError("Invalid position limit: lower >= upper")
        for label, values in (
            ("velocity", self.velocity_limits),
            ("acceleration", self.acceleration_limits),
            ("jerk", self.jerk_limits),
        ):
            if np.any(values <= 0):
                raise RobotConfigError(f"nonpositive limit in {label} limits")
        if np.any(self.retract_config <= self.lower) or np.any(self.retract_config >= self.upper):
            raise RobotConfigError("Retract config must lie strictly inside position limits")
        m = self.sphere_centers.shape[0]
        if self.sphere_links.shape[0] != m or self.sphere_radii.shape[0] != m:
            raise RobotConfigError("Sphere links, centers and radii must have equal length")
        if m and (self.sphere_links.min() < 0 or self.sphere_links.max() >= self.num_links):
            raise RobotConfigError("Sphere references an unknown link")
        if self.self_pairs.size:
            i, j = self.self_pairs[:, 0], self.self_pairs[:, 1]
            if np.any(i >= j) or np.any(i < 0) or np.any(j >= m):
                raise RobotConfigError("Self-collision pairs must satisfy 0 <= i < j < sphere count")
        if not 0 <= self.ee_link_index < self.num_links:
            raise RobotConfigError("End-effector link index out of range")

    @property
    def dof(self) -> int:
        return sum(1 for j in self.joints if j.actuated_index is not None)

    @property
    def num_links(self) -> int:
        return len(self.link_names)

    @property
    def num_spheres(self) -> int:
        return self.sphere_centers.shape[0]

    @property
    def lower(self) -> NDArray:
        return self.position_limits[:, 0]

    @property
    def upper(self) -> NDArray:
        return self.position_limits[:, 1]

    @property
    def joint_names(self) -> Tuple[str, ...]:
        ordered = sorted((j.actuated_index, j.name) for j in self.joints if j.actuated_index is not None)
        return tuple(name for _, name in ordered)

    def within_limits(self, q: NDArray) -> NDArray:
        q = np.atleast_2d(q)
        return np.all((q >= self.lower) & (q <= self.upper), axis=-1)


@dataclass(frozen=True, eq=False)
class Pose:
    position: NDArray
    quaternion: NDArray

    def __post_init__(self):
        position = np.array(self.position, dtype=np.float64).reshape(3)
        quat = np.array(self.quaternion, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(quat)
        if not np.all(np.isfinite(position)) or not np.isfinite(norm) or norm == 0:
            raise ValueError("Pose must be finite with a nonzero quaternion")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "quaternion", canonical_quat(quat / norm))

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose":
        values = list(values)
        if len(values) != 7:
            raise ValueError(f"Pose needs [x, y, z, qw, qx, qy, qz], got {len(values)} values")
        return cls(values[:3], values[3:])

    def to_list(self):
        return [float(v) for v in np.concatenate([self.position, self.quaternion])]


@dataclass(frozen=True, eq=False)
class Obb:
    name: str
    pose: Pose
    half_extents: NDArray
    enabled: bool = True

    def __post_init__(self):
        half = np.array(self.half_extents, dtype=np.float64).reshape(3)
        if np.any(half <= 0) or not np.all(np.isfinite(half)):
            raise SceneConfigError(f"Obstacle '{self.name}' needs positive half extents")
        object.__setattr__(self, "half_extents", half)

    @property
    def rotation(self) -> NDArray:
        return quat_to_matrix(self.pose.quaternion)


@dataclass(frozen=True, eq=False)
class WorldModel:
    obstacles: Tuple[Obb, ...] = ()
    centers: NDArray = field(init=False, repr=False)
    rotations: NDArray = field(init=False, repr=False)
    half_extents: NDArray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        active = [o for o in self.obstacles if o.enabled]
        object.__setattr__(self, "centers", np.array([o.pose.position for o in active]).reshape(-1, 3))
        object.__setattr__(self, "rotations", np.array([o.rotation for o in active]).reshape(-1, 3, 3))
        object.__setattr__(self, "half_extents", np.array([o.half_extents for o in active]).reshape(-1, 3))

    @property
    def num_boxes(self) -> int:
        return self.centers.shape[0]
