"""Rigid transforms, pinhole camera model, and image containers.

Conventions used throughout the package:

* Quaternions are stored as ``(w, x, y, z)`` and kept unit-norm.
* ``Pose`` holds the camera-to-world transform ``T_wc``; its inverse
  ``T_cw`` maps world points into the camera frame.
* Pixel coordinates are ``(u, v)`` = (column, row), with pixel centers at
  integer coordinates.
* Geometry runs in float64; image buffers are float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Z_NEAR = 0.01
"""Minimum camera-frame depth; points at or behind this plane are culled."""


class BehindCamera(ValueError):
    """Raised when a point's camera-frame depth is at or behind Z_NEAR."""


class InvalidDepth(ValueError):
    """Raised when a nonpositive depth is supplied for back-projection."""


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    return q / n


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def quats_to_rots(q: np.ndarray) -> np.ndarray:
    """Vectorized quat_to_rot for an (N, 4) array of unit quaternions."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class Pose:
    """Camera pose: rotation (unit quaternion) and translation of T_wc.

    ``transform`` applies T_wc (camera frame -> world frame);
    ``world_to_camera`` applies the inverse T_cw.
    """

    quat: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        q = quat_normalize(self.quat)
        t = np.asarray(self.trans, dtype=np.float64).reshape(3).copy()
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "trans", t)
        q.flags.writeable = False
        t.flags.writeable = False

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return Pose(rot_to_quat(T[:3, :3]), T[:3, 3])

    def rotation(self) -> np.ndarray:
        """3x3 rotation of T_wc (camera axes expressed in world frame)."""
        return quat_to_rot(self.quat)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous T_wc."""
        T = np.eye(4)
        T[:3, :3] = self.rotation()
        T[:3, 3] = self.trans
        return T

    def inverse_matrix(self) -> np.ndarray:
        """4x4 homogeneous T_cw."""
        R = self.rotation()
        T = np.eye(4)
        T[:3, :3] = R.T
        T[:3, 3] = -R.T @ self.trans
        return T

    def inverse(self) -> "Pose":
        R = self.rotation()
        return Pose(rot_to_quat(R.T), -R.T @ self.trans)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return Pose(
            quat_multiply(self.quat, other.quat),
            self.rotation() @ other.trans + self.trans,
        )

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map camera-frame points to world frame (applies T_wc)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation().T + self.trans

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map world points into the camera frame (applies T_cw)."""
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.trans) @ self.rotation()

    def camera_center(self) -> np.ndarray:
        return self.trans


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1]], dtype=np.float64
        )


@dataclass
class ImageBuffer:
    """Row-major float32 image; RGB values in [0,1], depth in meters (0 = invalid)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self) -> np.ndarray:
        """(H, W) view for single-channel buffers."""
        if self.channels != 1:
            raise ValueError("plane() requires a 1-channel buffer")
        return self.data[:, :, 0]


def project(point_world: np.ndarray, pose: Pose, intr: Intrinsics) -> tuple[np.ndarray, float]:
    """Project a world point; returns (pixel (u, v), camera-frame depth).

    Raises BehindCamera if the camera-frame depth is <= Z_NEAR.
    """
    p_cam = pose.world_to_camera(np.asarray(point_world, dtype=np.float64))
    X, Y, Z = p_cam
    if Z <= Z_NEAR:
        raise BehindCamera(f"depth {Z:.4g} <= z_near {Z_NEAR}")
    pixel = np.array([intr.fx * X / Z + intr.cx, intr.fy * Y / Z + intr.cy])
    return pixel, float(Z)


def back_project(pixel: np.ndarray, depth: float, pose: Pose, intr: Intrinsics) -> np.ndarray:
    """Lift a pixel with depth to a world point (inverse of ``project``).

    Raises InvalidDepth if depth <= 0.
    """
    if depth <= 0:
        raise InvalidDepth(f"depth {depth} <= 0")
    u, v = float(pixel[0]), float(pixel[1])
    p_cam = np.array(
        [(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth]
    )
    return pose.transform(p_cam)


def back_project_many(
    pixels: np.ndarray, depths: np.ndarray, pose: Pose, intr: Intrinsics
) -> np.ndarray:
    """Vectorized ``back_project`` for (N, 2) pixels and (N,) positive depths."""
    pixels = np.asarray(pixels, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    if np.any(depths <= 0):
        raise InvalidDepth("all depths must be positive")
    p_cam = np.stack(
        [
            (pixels[:, 0] - intr.cx) * depths / intr.fx,
            (pixels[:, 1] - intr.cy) * depths / intr.fy,
            depths,
        ],
        axis=1,
    )
    return pose.transform(p_cam)


def projection_jacobian(point_cam: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """2x3 Jacobian of the pinhole projection at a camera-frame point.

    J = [[fx/Z, 0, -fx*X/Z^2], [0, fy/Z, -fy*Y/Z^2]].
    Raises BehindCamera if Z <= Z_NEAR.
    """
    X, Y, Z = np.asarray(point_cam, dtype=np.float64)
    if Z <= Z_NEAR:
        raise BehindCamera(f"depth {Z:.4g} <= z_near {Z_NEAR}")
    return np.array(
        [
            [intr.fx / Z, 0.0, -intr.fx * X / (Z * Z)],
            [0.0, intr.fy / Z, -intr.fy * Y / (Z * Z)],
        ]
    )
