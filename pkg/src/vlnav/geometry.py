"""Rigid transforms and pinhole projection.

Frame conventions used throughout the package:

* camera frame: z forward, x right, y down.  A point is in front of the
  camera iff its camera-frame z > 0.
* body frame:   x forward, y left, z up (FLU).
* world frame:  z up, fixed.

Pinhole model with intrinsic matrix K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]:

    back-projection:  p_cam = d * K^-1 * [x, y, 1]^T
    projection:       (x, y) = (fx * X/Z + cx, fy * Y/Z + cy)

Sensor-to-world chaining for a sensor with extrinsics (R_e, t_e) mounted on
a body at pose (R_b, t_b):

    p_world = R_b * (R_e * p_sensor + t_e) + t_b
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROT_TOL = 1e-9

CAMERA = "camera"
BODY = "body"
WORLD = "world"
LIDAR = "lidar"


class InvalidDepthError(ValueError):
    """Depth is non-positive, NaN, or a no-return sentinel."""


class PixelOutOfBoundsError(ValueError):
    """Pixel coordinates fall outside [0, width] x [0, height]."""


class BehindCameraError(ValueError):
    """Point has camera-frame z <= 0 and cannot be projected."""


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    return a


@dataclass(frozen=True)
class Point3:
    """A 3D point in meters, tagged with the frame it lives in."""

    x: float
    y: float
    z: float
    frame: str = WORLD

    def __post_init__(self):
        if not np.isfinite([self.x, self.y, self.z]).all():
            raise ValueError("Point3 components must be finite")

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_vec(cls, v, frame: str = WORLD) -> "Point3":
        a = _as_vec3(v)
        return cls(float(a[0]), float(a[1]), float(a[2]), frame)


@dataclass(frozen=True)
class PixelTarget:
    """Continuous pixel coordinates (x = column, y = row)."""

    x: float
    y: float


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def contains(self, pixel: PixelTarget) -> bool:
        return 0.0 <= pixel.x <= self.width and 0.0 <= pixel.y <= self.height


@dataclass(frozen=True)
class Pose:
    """Rigid transform: applies p -> rotation @ p + translation.

    The rotation must be orthonormal with determinant +1 (within 1e-9);
    construction validates this so downstream code never sees a sheared
    or reflected frame.
    """

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = _as_vec3(self.translation)
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err >= ROT_TOL:
            raise ValueError(f"rotation is not orthonormal (|R^T R - I| = {err:.3e})")
        det = float(np.linalg.det(r))
        if abs(det - 1.0) >= ROT_TOL:
            raise ValueError(f"rotation must have det +1 (det = {det:.12f})")
        if not np.isfinite(t).all():
            raise ValueError("translation must be finite")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Rotation about the world z axis by `yaw` radians."""
        c, s = np.cos(yaw), np.sin(yaw)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(r, _as_vec3(translation))

    def apply(self, p) -> np.ndarray:
        """Transform a 3-vector or an (N, 3) array of points."""
        a = np.asarray(p, dtype=float)
        if a.ndim == 1:
            return self.rotation @ a + self.translation
        return a @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -(rt @ self.translation))


def pose_compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def pose_inverse(a: Pose) -> Pose:
    return a.inverse()


def back_project(pixel: PixelTarget, depth: float, intrinsics: CameraIntrinsics) -> Point3:
    """Lift a pixel with metric depth to the camera frame.

    Returns d * K^-1 * [x, y, 1]^T; the returned z equals `depth`.
    """
    d = float(depth)
    if not np.isfinite(d) or d <= 0.0:
        raise InvalidDepthError(f"depth must be finite and positive, got {depth!r}")
    if not intrinsics.contains(pixel):
        raise PixelOutOfBoundsError(
            f"pixel ({pixel.x}, {pixel.y}) outside "
            f"[0, {intrinsics.width}] x [0, {intrinsics.height}]"
        )
    x = d * (pixel.x - intrinsics.cx) / intrinsics.fx
    y = d * (pixel.y - intrinsics.cy) / intrinsics.fy
    return Point3(x, y, d, CAMERA)


def project(point: Point3, intrinsics: CameraIntrinsics) -> PixelTarget:
    """Project a camera-frame point to pixel coordinates (inverse of back_project)."""
    if point.z <= 0.0:
        raise BehindCameraError(f"camera-frame z must be positive, got {point.z}")
    return PixelTarget(
        intrinsics.fx * point.x / point.z + intrinsics.cx,
        intrinsics.fy * point.y / point.z + intrinsics.cy,
    )


def sensor_to_world(point: Point3, sensor_extrinsics: Pose, body_pose: Pose) -> Point3:
    """Chain a sensor-frame point through mount extrinsics and body pose."""
    p = body_pose.apply(sensor_extrinsics.apply(point.vec))
    return Point3.from_vec(p, WORLD)
