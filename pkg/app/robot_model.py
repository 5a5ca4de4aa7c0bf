"""
Robot description loading and batched forward kinematics with the adjoint
projection of Cartesian gradients back to joint space.
"""
from __future__ import annotations

from collections import deque
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import ValidationError

from .data_structures import KinematicsResult
from .exceptions import RobotConfigError, ShapeMismatchError
from .logger_service import LoggerService
from .models import JointSpec, RobotModel
from .schemas import JointDocument, LimitsDocument, RobotDocument, SphereDocument
from .utils import make_transform, matrix_to_quat, quat_multiply, rpy_to_matrix

logger = LoggerService(__name__)

RobotSource = Union[RobotDocument, dict, str, Path]


def _parse_document(source: RobotSource) -> RobotDocument:
    if isinstance(source, RobotDocument):
        return source
    try:
        if isinstance(source, dict):
            return RobotDocument.model_validate(source)
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            return RobotDocument.model_validate_json(Path(source).read_text())
        return RobotDocument.model_validate_json(source)
    except ValidationError as e:
        raise RobotConfigError(f"Malformed robot document: {e}")
    except OSError as e:
        raise RobotConfigError(f"Cannot read robot document {source}: {e}")


def _sort_joints(document: RobotDocument) -> Tuple[str, List[JointDocument]]:
    children = [j.child for j in document.joints]
    if len(set(children)) != len(children):
        raise RobotConfigError("A link is the child of more than one joint")
    roots = {j.parent for j in document.joints} - set(children)
    if document.base_link is not None:
        base = document.base_link
        if base in children:
            raise RobotConfigError(f"Base link '{base}' is the child of a joint")
    elif len(roots) == 1:
        base = roots.pop()
    elif not roots and document.joints:
        raise RobotConfigError("Cycle in kinematic chain: no base link")
    elif not document.joints:
        raise RobotConfigError("Robot document has no joints")
    else:
        raise RobotConfigError(f"Kinematic chain has several base links: {sorted(roots)}")

    by_parent: Dict[str, List[JointDocument]] = {}
    for joint in document.joints:
        by_parent.setdefault(joint.parent, []).append(joint)
    ordered = []
    queue = deque([base])
    while queue:
        link = queue.popleft()
        for joint in by_parent.get(link, []):
            ordered.append(joint)
            queue.append(joint.child)
    if len(ordered) != len(document.joints):
        missing = sorted(j.name for j in document.joints if j not in ordered)
        raise RobotConfigError(f"Cycle in kinematic chain or unknown parent for joints {missing}")
    return base, ordered


def _fixed_transform(joint: JointDocument) -> NDArray:
    if joint.transform is not None:
        transform = np.asarray(joint.transform, dtype=np.float64)
        if transform.shape != (4, 4):
            raise RobotConfigError(f"Joint '{joint.name}' transform must be 4x4")
        return transform
    origin = joint.origin
    if origin is None:
        return np.eye(4)
    return make_transform(rpy_to_matrix(origin.rpy), np.asarray(origin.xyz, dtype=np.float64))


def _self_pairs(document: RobotDocument, sphere_links: NDArray, parents: Dict[int, int],
                link_index: Dict[str, int]) -> NDArray:
    if document.self_collision_pairs is not None:
        return np.asarray(document.self_collision_pairs, dtype=np.int64).reshape(-1, 2)
    ignored = set()
    for pair in document.self_collision_ignore:
        if len(pair) != 2 or any(name not in link_index for name in pair):
            raise RobotConfigError(f"Self-collision ignore entry {pair} references an unknown link")
        a, b = link_index[pair[0]], link_index[pair[1]]
        ignored.add((min(a, b), max(a, b)))
    for child, parent in parents.items():
        ignored.add((min(child, parent), max(child, parent)))
    pairs = []
    for i in range(len(sphere_links)):
        for j in range(i + 1, len(sphere_links)):
            a, b = int(sphere_links[i]), int(sphere_links[j])
            if a != b and (min(a, b), max(a, b)) not in ignored:
                pairs.append((i, j))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def load_robot(config_document: RobotSource) -> RobotModel:
    document = _parse_document(config_document)
    base, ordered = _sort_joints(document)

    link_names = [base] + [j.child for j in ordered]
    link_index = {name: i for i, name in enumerate(link_names)}
    actuated_order = [j.name for j in document.joints if j.kind != "fixed"]

    joints = []
    parents = {}
    for index, joint in enumerate(ordered):
        actuated = actuated_order.index(joint.name) if joint.kind != "fixed" else None
        parents[index + 1] = link_index[joint.parent]
        joints.append(JointSpec(
            name=joint.name,
            kind=joint.kind,
            fixed_transform=_fixed_transform(joint),
            parent_link_index=link_index[joint.parent],
            actuated_index=actuated,
            child_link_name=joint.child,
        ))

    for sphere in document.spheres:
        if sphere.link not in link_index:
            raise RobotConfigError(f"Sphere references unknown link '{sphere.link}'")
    if document.ee_link not in link_index:
        raise RobotConfigError(f"Unknown end-effector link '{document.ee_link}'")

    sphere_links = np.array([link_index[s.link] for s in document.spheres], dtype=np.int64)
    limits = document.limits
    model = RobotModel(
        name=document.name,
        link_names=tuple(link_names),
        joints=tuple(joints),
        position_limits=np.asarray(limits.position, dtype=np.float64),
        velocity_limits=limits.velocity,
        acceleration_limits=limits.acceleration,
        jerk_limits=limits.jerk,
        sphere_links=sphere_links,
        sphere_centers=np.array([s.center for s in document.spheres], dtype=np.float64).reshape(-1, 3),
        sphere_radii=np.array([s.radius for s in document.spheres], dtype=np.float64),
        self_pairs=_self_pairs(document, sphere_links, parents, link_index),
        ee_link_index=link_index[document.ee_link],
        retract_config=document.retract_config,
    )
    logger.debug(f"[ROBOT] Loaded '{model.name}': {model.dof} DOF, {model.num_spheres} spheres, "
                 f"{len(model.self_pairs)} self-collision pairs")
    return model


def to_document(model: RobotModel) -> RobotDocument:
    """Serialize a model back to a document that loads into an equal model."""
    joints = []
    for index, joint in enumerate(model.joints):
        joints.append(JointDocument(
            name=joint.name,
            kind=joint.kind,
            parent=model.link_names[joint.parent_link_index],
            child=model.link_names[index + 1],
            transform=joint.fixed_transform.tolist(),
        ))
    # actuated joints must appear in actuated order for the index assignment on reload
    order = {s.name: (-1 if s.actuated_index is None else s.actuated_index) for s in model.joints}
    joints.sort(key=lambda j: order[j.name])
    return RobotDocument(
        name=model.name,
        base_link=model.link_names[0],
        joints=joints,
        limits=LimitsDocument(
            position=model.position_limits.tolist(),
            velocity=model.velocity_limits.tolist(),
            acceleration=model.acceleration_limits.tolist(),
            jerk=model.jerk_limits.tolist(),
        ),
        spheres=[
            SphereDocument(link=model.link_names[link], center=center.tolist(), radius=float(radius))
            for link, center, radius in zip(model.sphere_links, model.sphere_centers, model.sphere_radii)
        ],
        self_collision_pairs=model.self_pairs.tolist(),
        retract_config=model.retract_config.tolist(),
        ee_link=model.link_names[model.ee_link_index],
    )


def joint_transform(joint: JointSpec, values: NDArray) -> NDArray:
    """B x 4 x 4 motion of a single joint for the B joint values given."""
    batch = values.shape[0]
    transform = np.zeros((batch, 4, 4))
    transform[:, 3, 3] = 1.0
    if joint.kind == "fixed":
        transform[:, 0, 0] = transform[:, 1, 1] = transform[:, 2, 2] = 1.0
        return transform
    axis = "xyz".index(joint.kind[-1])
    if joint.is_prismatic:
        transform[:, 0, 0] = transform[:, 1, 1] = transform[:, 2, 2] = 1.0
        transform[:, axis, 3] = values
        return transform
    c, s = np.cos(values), np.sin(values)
    i, j = [a for a in range(3) if a != axis]
    transform[:, axis, axis] = 1.0
    transform[:, i, i] = c
    transform[:, j, j] = c
    # positive rotation about the axis in a right-handed frame
    if axis == 1:
        transform[:, i, j] = s
        transform[:, j, i] = -s
    else:
        transform[:, i, j] = -s
        transform[:, j, i] = s
    return transform


def _check_q(model: RobotModel, q: NDArray) -> NDArray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2 or q.shape[1] != model.dof:
        raise ShapeMismatchError("joint positions", f"(B, {model.dof})", q.shape)
    return q


def forward_kinematics(model: RobotModel, q: NDArray) -> KinematicsResult:
    q = _check_q(model, q)
    batch = q.shape[0]
    transforms = np.empty((batch, model.num_links, 4, 4))
    transforms[:, 0] = np.eye(4)
    for index, joint in enumerate(model.joints):
        values = q[:, joint.actuated_index] if joint.actuated_index is not None else np.zeros(batch)
        local = np.einsum("ij,bjk->bik", joint.fixed_transform, joint_transform(joint, values))
        transforms[:, index + 1] = np.einsum("bij,bjk->bik", transforms[:, joint.parent_link_index], local)

    sphere_frames = transforms[:, model.sphere_links]
    sphere_positions = (np.einsum("bmij,mj->bmi", sphere_frames[..., :3, :3], model.sphere_centers)
                        + sphere_frames[..., :3, 3])
    ee = transforms[:, model.ee_link_index]
    return KinematicsResult(
        sphere_positions=sphere_positions,
        sphere_radii=model.sphere_radii,
        ee_position=ee[:, :3, 3].copy(),
        ee_quaternion=matrix_to_quat(ee[:, :3, :3]),
        link_transforms=transforms,
    )


def _joint_axes(model: RobotModel, transforms: NDArray):
    """World axis and origin of every actuated joint, plus revolute/prismatic masks."""
    batch = transforms.shape[0]
    axes = np.zeros((batch, model.dof, 3))
    origins = np.zeros((batch, model.dof, 3))
    revolute = np.zeros(model.dof, dtype=bool)
    for index, joint in enumerate(model.joints):
        k = joint.actuated_index
        if k is None:
            continue
        child = transforms[:, index + 1]
        axes[:, k] = child[:, :3, :3] @ joint.axis
        origins[:, k] = child[:, :3, 3]
        revolute[k] = joint.is_revolute
    return axes, origins, revolute


def kinematics_gradient(model: RobotModel, q: NDArray, d_spheres: Optional[NDArray] = None,
                        d_ee_pos: Optional[NDArray] = None, d_ee_quat: Optional[NDArray] = None,
                        kinematics: Optional[KinematicsResult] = None) -> NDArray:
    """
    Project Cartesian cotangents (spheres B x M x 3, ee position B x 3, ee
    quaternion B x 4) to a B x D joint gradient. Reuses kinematics when given.
    """
    q = _check_q(model, q)
    batch = q.shape[0]
    if kinematics is None:
        kinematics = forward_kinematics(model, q)
    axes, origins, revolute = _joint_axes(model, kinematics.link_transforms)
    gradient = np.zeros((batch, model.dof))

    if d_spheres is not None:
        d_spheres = np.asarray(d_spheres, dtype=np.float64)
        if d_spheres.shape != (batch, model.num_spheres, 3):
            raise ShapeMismatchError("sphere gradient", (batch, model.num_spheres, 3), d_spheres.shape)
        mask = model.ancestors[model.sphere_links].astype(np.float64)  # M x D
        moment = np.einsum("bmi,mk->bki", np.cross(kinematics.sphere_positions, d_spheres), mask)
        force = np.einsum("bmi,mk->bki", d_spheres, mask)
        gradient += _project(axes, origins, revolute, moment, force)

    if d_ee_pos is not None:
        d_ee_pos = np.asarray(d_ee_pos, dtype=np.float64)
        if d_ee_pos.shape != (batch, 3):
            raise ShapeMismatchError("end-effector position gradient", (batch, 3), d_ee_pos.shape)
        mask = model.ancestors[model.ee_link_index].astype(np.float64)
        moment = np.cross(kinematics.ee_position, d_ee_pos)[:, None, :] * mask[None, :, None]
        force = d_ee_pos[:, None, :] * mask[None, :, None]
        gradient += _project(axes, origins, revolute, moment, force)

    if d_ee_quat is not None:
        d_ee_quat = np.asarray(d_ee_quat, dtype=np.float64)
        if d_ee_quat.shape != (batch, 4):
            raise ShapeMismatchError("end-effector quaternion gradient", (batch, 4), d_ee_quat.shape)
        mask = model.ancestors[model.ee_link_index] & revolute
        pure = np.concatenate([np.zeros((batch, model.dof, 1)), axes], axis=-1)
        quat = np.broadcast_to(kinematics.ee_quaternion[:, None, :], pure.shape)
        rate = 0.5 * quat_multiply(pure, quat)  # B x D x 4
        gradient += np.einsum("bki,bi->bk", rate, d_ee_quat) * mask

    return gradient


def _project(axes, origins, revolute, moment, force) -> NDArray:
    # revolute: a . (sum x cross g - d cross sum g); prismatic: a . sum g
    rotational = np.einsum("bki,bki->bk", axes, moment - np.cross(origins, force))
    translational = np.einsum("bki,bki->bk", axes, force)
    return np.where(revolute[None, :], rotational, translational)


def robot_summary(model: RobotModel) -> dict:
    return {
        "name": model.name,
        "dof": model.dof,
        "joints": list(model.joint_names),
        "spheres": model.num_spheres,
        "self_pairs": int(len(model.self_pairs)),
    }
