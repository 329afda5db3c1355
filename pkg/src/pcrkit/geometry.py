"""SE(3) transforms, quaternion algebra, transform sampling and error metrics.

Quaternions are scalar-first ``(w, x, y, z)``. All metric math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

QUAT_EPS = 1e-12


@dataclass(frozen=True)
class RigidTransform:
    """Rotation ``R`` (3x3) and translation ``t`` (3,) acting as ``x -> R x + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "RigidTransform":
        mat = np.asarray(mat, dtype=np.float64).reshape(4, 4)
        return cls(mat[:3, :3], mat[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def is_valid(self, tol: float = 1e-6) -> bool:
        r = self.rotation
        ortho = np.linalg.norm(r.T @ r - np.eye(3)) < tol
        return bool(ortho and abs(np.linalg.det(r) - 1.0) < tol)

    def to_text(self) -> str:
        """Row-major 4x4 homogeneous matrix, one row per line."""
        return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in self.matrix())

    @classmethod
    def from_text(cls, text: str) -> "RigidTransform":
        values = [float(v) for v in text.split()]
        if len(values) != 16:
            raise ValueError(f"expected 16 matrix entries, got {len(values)}")
        return cls.from_matrix(np.array(values))


@dataclass(frozen=True)
class Pose7:
    """Raw 7-vector head output: translation then unnormalized quaternion."""

    t: np.ndarray
    q_raw: np.ndarray

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "Pose7":
        v = np.asarray(v, dtype=np.float64).reshape(7)
        return cls(v[:3].copy(), v[3:].copy())


def quat_normalize(q_raw: Sequence[float]) -> np.ndarray:
    q = np.asarray(q_raw, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if n < QUAT_EPS:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return q / n


def quat_to_rotmat(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64).reshape(4)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def pose7_to_transform(p: Pose7 | Sequence[float]) -> RigidTransform:
    if not isinstance(p, Pose7):
        p = Pose7.from_vector(p)
    return RigidTransform(quat_to_rotmat(quat_normalize(p.q_raw)), p.t)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform that applies ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def compose_chain(steps: Iterable[RigidTransform]) -> RigidTransform:
    """Compose ``[T1, T2, ..., Tn]`` (applied in that order) into ``Tn ... T2 T1``."""
    total = RigidTransform.identity()
    for step in steps:
        total = compose(step, total)
    return total


def apply_transform(T: RigidTransform, cloud: np.ndarray) -> np.ndarray:
    pts = np.asarray(cloud, dtype=np.float64)
    return pts @ T.rotation.T + T.translation


def euler_zyx_to_rotmat(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Intrinsic Z-Y'-X'' rotation, angles in radians."""
    cz, sz = np.cos(yaw), np.sin(yaw)
    cy, sy = np.cos(pitch), np.sin(pitch)
    cx, sx = np.cos(roll), np.sin(roll)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rz @ ry @ rx


def random_transform(
    rng: np.random.Generator, angle_range_deg: float = 45.0, trans_range: float = 1.0
) -> RigidTransform:
    if angle_range_deg < 0:
        raise ValueError("angle_range_deg must be non-negative")
    a = np.deg2rad(angle_range_deg)
    yaw, pitch, roll = rng.uniform(-a, a, size=3)
    t = rng.uniform(-trans_range, trans_range, size=3)
    return RigidTransform(euler_zyx_to_rotmat(yaw, pitch, roll), t)


def rotation_angle_deg(rot: np.ndarray) -> float:
    """Axis-angle magnitude in [0, 180].

    Uses atan2 of the skew part against the clamped trace term; plain acos of
    the trace loses ~1e-6 degrees of resolution near zero.
    """
    cos = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    skew = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    sin = np.linalg.norm(skew) / 2.0
    return float(np.degrees(np.arctan2(sin, cos)))


def rotation_error_deg(est: RigidTransform, gt: RigidTransform) -> float:
    return rotation_angle_deg(est.rotation @ gt.rotation.T)


def translation_error(est: RigidTransform, gt: RigidTransform) -> float:
    return float(np.linalg.norm(est.translation - gt.translation))


def convergence_delta(curr: RigidTransform, prev: RigidTransform) -> float:
    """Frobenius norm of ``curr @ prev^-1 - I`` over the 4x4 homogeneous matrices."""
    rel = curr.matrix() @ prev.inverse().matrix()
    return float(np.linalg.norm(rel - np.eye(4)))
