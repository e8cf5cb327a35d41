"""Pinhole camera math and least-squares ray triangulation.

Coordinate convention (right-handed, chosen so pixel math is sign-free):

- +X right, +Y down, +Z forward; the camera looks along +Z.
- Image u grows right, v grows down, origin at the top-left pixel corner;
  the center of pixel (row r, col c) is at (u, v) = (c + 0.5, r + 0.5).
- A pose is 6 numbers: a world position and intrinsic Euler angles
  (roll, pitch, yaw) applied in yaw -> pitch -> roll order. The resulting
  matrix maps camera-frame vectors into the world frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BehindCamera(Exception):
    """Point has non-positive depth in the camera frame; caller must cull."""


class TooFewRays(Exception):
    """Triangulation needs at least two rays."""


class DegenerateConfiguration(Exception):
    """The ray bundle is (near-)parallel; the normal system is singular."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics plus the near/far plane depths used by unproject.

    Focal lengths and principal point are in pixels; z_near/z_far are in
    model units. Only the ray through the two planes matters downstream,
    so the plane depths are cosmetic as long as 0 < z_near < z_far.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    z_near: float = 0.1
    z_far: float = 100.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not (0 < self.z_near < self.z_far):
            raise ValueError(f"need 0 < z_near < z_far, got {self.z_near}, {self.z_far}")


@dataclass(frozen=True)
class CameraPose:
    """6-DoF camera pose: world position + (roll, pitch, yaw) in radians."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        ori = np.asarray(self.orientation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(ori))):
            raise ValueError("pose position/orientation must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", ori)

    @classmethod
    def from_rotation(cls, position, matrix) -> "CameraPose":
        """Pose from a camera-to-world rotation matrix.

        Recovers the yaw -> pitch -> roll Euler triple; at the gimbal-lock
        pitch of +-pi/2 one representative of the family is returned.
        """
        r = np.asarray(matrix, dtype=np.float64)
        pitch = np.arcsin(np.clip(-r[1, 2], -1.0, 1.0))
        roll = np.arctan2(r[1, 0], r[1, 1])
        yaw = np.arctan2(r[0, 2], r[2, 2])
        return cls(position=position, orientation=np.array([roll, pitch, yaw]))

    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation matrix (columns are the camera axes)."""
        roll, pitch, yaw = self.orientation
        cr, sr = np.cos(roll), np.sin(roll)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cy, sy = np.cos(yaw), np.sin(yaw)
        ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
        rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
        return ry @ rx @ rz


@dataclass(frozen=True)
class Ray:
    """3D line through an origin (near-plane point) with unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(direction)
        if not norm > 0:
            raise ValueError("ray direction must be nonzero")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction / norm)

    @classmethod
    def through(cls, a, b) -> "Ray":
        """Ray from point a toward point b."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        return cls(a, b - a)

    def distance_to(self, point) -> float:
        """Perpendicular distance from a 3D point to this line."""
        delta = np.asarray(point, dtype=np.float64) - self.origin
        return float(np.linalg.norm(np.cross(self.direction, delta)))


def world_to_camera(pose: CameraPose, points) -> np.ndarray:
    """Map world points (..., 3) into the camera frame (+Z forward)."""
    pts = np.asarray(points, dtype=np.float64)
    return (pts - pose.position) @ pose.rotation()


def camera_to_world(pose: CameraPose, points) -> np.ndarray:
    """Inverse of world_to_camera."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ pose.rotation().T + pose.position


def project(intr: CameraIntrinsics, pose: CameraPose, point) -> tuple[float, float, float]:
    """Project one world point to (u, v, depth).

    Raises BehindCamera when the camera-frame depth is <= 0.
    """
    xc, yc, zc = world_to_camera(pose, point)
    if zc <= 0:
        raise BehindCamera(f"point has camera depth {zc} <= 0")
    u = intr.fx * xc / zc + intr.cx
    v = intr.fy * yc / zc + intr.cy
    return float(u), float(v), float(zc)


def unproject(intr: CameraIntrinsics, pose: CameraPose, u: float, v: float) -> Ray:
    """Ray through the near- and far-plane points behind pixel (u, v).

    Sub-pixel coordinates are fine, including outside the image rectangle.
    """
    xn = (u - intr.cx) / intr.fx
    yn = (v - intr.cy) / intr.fy
    near = camera_to_world(pose, np.array([xn * intr.z_near, yn * intr.z_near, intr.z_near]))
    far = camera_to_world(pose, np.array([xn * intr.z_far, yn * intr.z_far, intr.z_far]))
    return Ray.through(near, far)


# Relative eigenvalue ratio below which the ray bundle counts as parallel.
DEGENERACY_RATIO = 1e-9


def nearest_point_to_lines(rays: list[Ray]) -> tuple[np.ndarray, float]:
    """Least-squares nearest point to a bundle of 3D lines.

    Minimizes sum_i ||(I - d_i d_i^T)(x - a_i)||^2 over x by solving the
    3x3 normal system [sum_i (I - d_i d_i^T)] x = sum_i (I - d_i d_i^T) a_i.

    Returns (point, rms point-to-line distance). Raises TooFewRays for
    fewer than two rays and DegenerateConfiguration when the system's
    smallest eigenvalue is below DEGENERACY_RATIO times the largest
    (all rays near-parallel).
    """
    if len(rays) < 2:
        raise TooFewRays(f"need >= 2 rays, got {len(rays)}")
    a = np.zeros((3, 3))
    b = np.zeros(3)
    eye = np.eye(3)
    for ray in rays:
        proj = eye - np.outer(ray.direction, ray.direction)
        a += proj
        b += proj @ ray.origin
    eigvals = np.linalg.eigvalsh(a)
    if eigvals[0] < DEGENERACY_RATIO * eigvals[-1]:
        raise DegenerateConfiguration(
            f"near-parallel rays (eigenvalue ratio {eigvals[0] / eigvals[-1]:.3e})"
        )
    point = np.linalg.solve(a, b)
    sq = [ray.distance_to(point) ** 2 for ray in rays]
    return point, float(np.sqrt(np.mean(sq)))
