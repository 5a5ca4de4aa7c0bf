from __future__ import annotations

import hashlib
import math
from typing import List, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation
from scipy.stats import qmc

LOG2 = math.log(2.0)


def logcosh(x: NDArray) -> NDArray:
    """log(cosh(x)) without overflow for large |x|."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - LOG2


def quat_to_matrix(quat: NDArray) -> NDArray:
    """(..., 4) quaternions in (w, x, y, z) order to (..., 3, 3) rotation matrices."""
    q = np.asarray(quat, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3))
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def matrix_to_quat(rot: NDArray) -> NDArray:
    """
    (..., 3, 3) rotation matrices to unit quaternions (w, x, y, z) with w >= 0.
    Branches on the largest of the trace and the diagonal entries.
    """
    r = np.asarray(rot, dtype=np.float64)
    r00, r11, r22 = r[..., 0, 0], r[..., 1, 1], r[..., 2, 2]
    trace = r00 + r11 + r22
    d21 = r[..., 2, 1] - r[..., 1, 2]
    d02 = r[..., 0, 2] - r[..., 2, 0]
    d10 = r[..., 1, 0] - r[..., 0, 1]
    s01 = r[..., 0, 1] + r[..., 1, 0]
    s02 = r[..., 0, 2] + r[..., 2, 0]
    s12 = r[..., 1, 2] + r[..., 2, 1]

    def _part(expr):
        return 0.5 * np.sqrt(np.maximum(expr, 0.0))

    def _div(num, den):
        safe = np.where(den > 0, den, 1.0)
        return num / (4.0 * safe)

    w0 = _part(1.0 + trace)
    x1 = _part(1.0 + r00 - r11 - r22)
    y2 = _part(1.0 - r00 + r11 - r22)
    z3 = _part(1.0 - r00 - r11 + r22)
    candidates = np.stack([
        np.stack([w0, _div(d21, w0), _div(d02, w0), _div(d10, w0)], axis=-1),
        np.stack([_div(d21, x1), x1, _div(s01, x1), _div(s02, x1)], axis=-1),
        np.stack([_div(d02, y2), _div(s01, y2), y2, _div(s12, y2)], axis=-1),
        np.stack([_div(d10, z3), _div(s02, z3), _div(s12, z3), z3], axis=-1),
    ], axis=-2)
    branch = np.argmax(np.stack([trace, r00, r11, r22], axis=-1), axis=-1)
    quat = np.take_along_axis(candidates, branch[..., None, None], axis=-2)[..., 0, :]
    quat = quat / np.linalg.norm(quat, axis=-1, keepdims=True)
    return canonical_quat(quat)


def canonical_quat(quat: NDArray) -> NDArray:
    q = np.array(quat, dtype=np.float64)
    flip = q[..., 0] < 0
    q[flip] = -q[flip]
    return q


def quat_multiply(a: NDArray, b: NDArray) -> NDArray:
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def rpy_to_matrix(rpy: Sequence[float]) -> NDArray:
    """Fixed-axis roll, pitch, yaw (applied about x, then y, then z) to a rotation matrix."""
    return Rotation.from_euler("xyz", np.asarray(rpy, dtype=np.float64)).as_matrix()


def make_transform(rotation: Optional[NDArray] = None, translation: Optional[NDArray] = None) -> NDArray:
    transform = np.eye(4)
    if rotation is not None:
        transform[:3, :3] = rotation
    if translation is not None:
        transform[:3, 3] = translation
    return transform


def random_streams(seed: int, count: int) -> List[np.random.Generator]:
    """Independent counter-based generators, one per seed index."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def content_streams(seed: int, rows: NDArray) -> List[np.random.Generator]:
    """One generator per row, keyed by the row's bytes so equal rows draw equal noise."""
    rows = np.ascontiguousarray(rows, dtype=np.float64).reshape(len(rows), -1)
    streams = []
    for row in rows:
        digest = hashlib.blake2b(row.tobytes(), digest_size=16).digest()
        words = np.frombuffer(digest, dtype=np.uint32).tolist()
        streams.append(np.random.Generator(np.random.Philox(np.random.SeedSequence([seed] + words))))
    return streams


def halton_samples(count: int, lower: NDArray, upper: NDArray, seed: int = 0) -> NDArray:
    """Scrambled Halton points scaled to the box [lower, upper]."""
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if count <= 0:
        return np.zeros((0, lower.shape[0]))
    sampler = qmc.Halton(d=lower.shape[0], scramble=True, seed=seed)
    unit = sampler.random(count)
    return qmc.scale(unit, lower, upper)


def nearest_rank_percentile(values: Sequence[float], percent: float) -> Optional[float]:
    ordered = sorted(values)
    if not ordered:
        return None
    rank = max(1, math.ceil(percent / 100.0 * len(ordered)))
    return float(ordered[rank - 1])
