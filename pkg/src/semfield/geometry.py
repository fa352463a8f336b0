"""Pinhole cameras, rigid camera-to-world poses, rays and reprojection.

Conventions (fixed across the whole package):
  * camera looks along -z, +y up, right-handed;
  * pixel centres sit at integer + 0.5;
  * poses are camera-to-world;
  * depth is the Euclidean distance along the (unit) ray, not z-depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from semfield.errors import DomainError


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DomainError("camera dimensions must be >= 1")
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point outside image")

    @staticmethod
    def from_hfov(width: int, height: int, hfov_deg: float = 90.0) -> "Camera":
        """Camera with the given horizontal field of view, square pixels."""
        f = width / (2.0 * np.tan(np.radians(hfov_deg) / 2.0))
        return Camera(width, height, f, f, width / 2.0, height / 2.0)


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise DomainError("pose must be a 3x3 rotation and a 3-vector")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise DomainError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-6):
            raise DomainError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return Pose(m[:3, :3].copy(), m[:3, 3].copy())

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> "Pose":
        """Pose at ``eye`` with the -z axis pointing toward ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        n = np.linalg.norm(fwd)
        if n < 1e-12:
            raise DomainError("eye and target coincide")
        fwd = fwd / n
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        rn = np.linalg.norm(right)
        if rn < 1e-12:
            raise DomainError("view direction parallel to up vector")
        right = right / rn
        cam_up = np.cross(right, fwd)
        rot = np.stack([right, cam_up, -fwd], axis=1)  # columns: x, y, z axes
        return Pose(rot, eye)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise DomainError("ray direction must be unit length")
        if not (0 < self.t_near < self.t_far):
            raise DomainError("need 0 < t_near < t_far")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return self.origin + np.asarray(t)[..., None] * self.direction


def pixel_directions(camera: Camera, pose: Pose) -> np.ndarray:
    """Unit world-space ray directions for every pixel, shape (H, W, 3)."""
    xs = (np.arange(camera.width) + 0.5 - camera.cx) / camera.fx
    ys = -(np.arange(camera.height) + 0.5 - camera.cy) / camera.fy
    d = np.empty((camera.height, camera.width, 3))
    d[..., 0] = xs[None, :]
    d[..., 1] = ys[:, None]
    d[..., 2] = -1.0
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ pose.rotation.T


def ray_for_pixel(camera: Camera, pose: Pose, px, bounds) -> Ray:
    """Back-project a pixel into a world-space ray.

    ``px`` is (x, y) in pixel indices; the ray passes through the pixel
    centre at (x + 0.5, y + 0.5).
    """
    x, y = float(px[0]), float(px[1])
    if not (0 <= x < camera.width and 0 <= y < camera.height):
        raise DomainError(f"pixel {px} outside {camera.width}x{camera.height} image")
    d_cam = np.array([
        (x + 0.5 - camera.cx) / camera.fx,
        -(y + 0.5 - camera.cy) / camera.fy,
        -1.0,
    ])
    d = pose.rotation @ d_cam
    d /= np.linalg.norm(d)
    return Ray(pose.translation.copy(), d, bounds[0], bounds[1])


def project(point_world, pose: Pose, camera: Camera):
    """World point -> (pixel coords, ray depth) in the given camera.

    Returns None when the point is behind the camera.
    """
    p = np.asarray(point_world, dtype=np.float64)
    pc = pose.rotation.T @ (p - pose.translation)
    if pc[2] >= -1e-12:
        return None
    u = pc[0] / (-pc[2]) * camera.fx + camera.cx - 0.5
    v = -pc[1] / (-pc[2]) * camera.fy + camera.cy - 0.5
    return np.array([u, v]), float(np.linalg.norm(pc))


def project_batch(points_world: np.ndarray, pose: Pose, camera: Camera):
    """Vectorised projection of world points into a camera.

    Returns (uv (N, 2), ray depth (N,), valid (N,)) where valid marks points
    in front of the camera that land on the image."""
    p = np.asarray(points_world, dtype=np.float64).reshape(-1, 3)
    pc = (p - pose.translation) @ pose.rotation
    z = pc[:, 2]
    front = z < -1e-12
    zsafe = np.where(front, -z, 1.0)
    u = pc[:, 0] / zsafe * camera.fx + camera.cx - 0.5
    v = -pc[:, 1] / zsafe * camera.fy + camera.cy - 0.5
    depth = np.linalg.norm(pc, axis=1)
    valid = front & (u >= -0.5) & (u < camera.width - 0.5) \
        & (v >= -0.5) & (v < camera.height - 0.5)
    return np.stack([u, v], axis=1), depth, valid


def reproject(px, depth, pose_src: Pose, pose_tgt: Pose, camera: Camera):
    """Lift ``px`` at ``depth`` (ray distance) in the source view, project
    into the target view. Returns target pixel coords or None when the point
    falls behind the target camera or outside the image."""
    if depth <= 0:
        raise DomainError("depth must be positive")
    ray = ray_for_pixel(camera, pose_src, px, (min(depth, 1e-3), depth + 1.0))
    point = ray.origin + depth * ray.direction
    hit = project(point, pose_tgt, camera)
    if hit is None:
        return None
    uv, _ = hit
    if not (-0.5 <= uv[0] < camera.width - 0.5 and -0.5 <= uv[1] < camera.height - 0.5):
        return None
    return uv


def lift_pixels(camera: Camera, pose: Pose, depth: np.ndarray) -> np.ndarray:
    """Lift a full depth map (ray distances) to world points, (H, W, 3)."""
    dirs = pixel_directions(camera, pose)
    return pose.translation + depth[..., None] * dirs
