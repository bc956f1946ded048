"""Rigid transforms between named frames.

A ``Pose3`` named ``T`` with ``from_frame="brick"`` and ``to_frame="base"``
maps coordinates expressed in ``brick`` into ``base``.  Composition checks that
frames chain; a frame of ``None`` is a wildcard.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import FrameMismatch

_NORM_TOL = 1e-9


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def rotvec_to_matrix(v: np.ndarray) -> np.ndarray:
    """Rodrigues' formula."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v)
    K = skew(v)
    if theta < 1e-12:
        return np.eye(3) + K
    K /= theta
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class Pose3:
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    from_frame: Optional[str] = None
    to_frame: Optional[str] = None

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("zero quaternion")
        if abs(n - 1.0) > _NORM_TOL:
            q = q / n
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    # construction -------------------------------------------------------
    @classmethod
    def identity(cls, frame: Optional[str] = None) -> "Pose3":
        return cls(from_frame=frame, to_frame=frame)

    @classmethod
    def from_matrix(cls, M, from_frame=None, to_frame=None) -> "Pose3":
        M = np.asarray(M, dtype=float)
        R = M[:3, :3]
        # re-orthonormalize to absorb round-off from chained products
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            raise ValueError("rotation part is a reflection")
        return cls(matrix_to_quat(R), M[:3, 3], from_frame, to_frame)

    @classmethod
    def from_rt(cls, R, t, from_frame=None, to_frame=None) -> "Pose3":
        M = np.eye(4)
        M[:3, :3] = R
        M[:3, 3] = t
        return cls.from_matrix(M, from_frame, to_frame)

    @classmethod
    def from_xyz_yaw(cls, x, y, z, yaw, from_frame=None, to_frame=None) -> "Pose3":
        q = np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)])
        return cls(q, np.array([x, y, z], dtype=float), from_frame, to_frame)

    # accessors ----------------------------------------------------------
    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.translation
        return M

    def yaw(self) -> float:
        """Heading of the transformed x-axis about +z."""
        R = self.R
        return float(np.arctan2(R[1, 0], R[0, 0]))

    # group operations ---------------------------------------------------
    def inverse(self) -> "Pose3":
        w, x, y, z = self.rotation
        qi = np.array([w, -x, -y, -z])
        t = -(quat_to_matrix(qi) @ self.translation)
        return Pose3(qi, t, self.to_frame, self.from_frame)

    def compose(self, other: "Pose3") -> "Pose3":
        """``self ∘ other``: apply ``other`` first."""
        if self.from_frame is not None and other.to_frame is not None and self.from_frame != other.to_frame:
            raise FrameMismatch(self.from_frame, other.to_frame)
        q = quat_multiply(self.rotation, other.rotation)
        t = self.R @ other.translation + self.translation
        return Pose3(q, t, other.from_frame, self.to_frame)

    def __matmul__(self, other):
        if isinstance(other, Pose3):
            return self.compose(other)
        return self.apply(other)

    def apply(self, points) -> np.ndarray:
        """Transform a 3-vector or an (N, 3) array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.R.T

    def with_frames(self, from_frame=None, to_frame=None) -> "Pose3":
        return Pose3(self.rotation, self.translation, from_frame, to_frame)

    def almost_equal(self, other: "Pose3", tol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.R, other.R, atol=tol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=tol, rtol=0)
        )

    def to_dict(self) -> dict:
        return {
            "rotation_wxyz": [float(v) for v in self.rotation],
            "translation": [float(v) for v in self.translation],
            "from_frame": self.from_frame,
            "to_frame": self.to_frame,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose3":
        return cls(
            np.array(d["rotation_wxyz"], dtype=float),
            np.array(d["translation"], dtype=float),
            d.get("from_frame"),
            d.get("to_frame"),
        )


def relative_yaw(a: Pose3, b: Pose3) -> float:
    """Signed yaw difference ``b - a`` wrapped to [-pi, pi)."""
    return float(wrap_angle(b.yaw() - a.yaw()))
