"""Rigid transforms, perspective projection and the Mahalanobis metric.

Conventions used throughout the package:
  * rotations are 3x3 matrices acting on column vectors, composed as
    R = Rz(rz) @ Ry(ry) @ Rx(rx);
  * angles are radians internally (degrees only at the CLI/config boundary);
  * lengths are millimetres, image coordinates are pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDepth, SingularCovariance

# Minimum |depth| (mm) before projection is declared degenerate.
DEPTH_EPSILON = 1e-6


@dataclass(frozen=True)
class EulerAngles:
    """Rotation angles (radians) about the x, y, z axes."""

    rx: float
    ry: float
    rz: float

    def as_array(self):
        return np.array([self.rx, self.ry, self.rz], dtype=float)

    def canonical(self):
        """Wrap each angle into [-pi, pi] for reporting."""
        wrapped = (self.as_array() + np.pi) % (2.0 * np.pi) - np.pi
        return EulerAngles(*wrapped)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera constants: focal distance and pixel scale."""

    focal_mm: float
    scale_mm_per_pixel: float

    def __post_init__(self):
        if not (self.focal_mm > 0 and self.scale_mm_per_pixel > 0):
            raise ValueError("focal_mm and scale_mm_per_pixel must be positive")

    @property
    def pixel_factor(self):
        """The product f*s that scales the normalized image coordinates."""
        return self.focal_mm * self.scale_mm_per_pixel


@dataclass(frozen=True)
class RigidTransform:
    """Rotation matrix plus translation vector (the pose parameters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))

    def is_valid_rotation(self, tol=1e-9):
        R = self.rotation
        return (
            np.linalg.norm(R.T @ R - np.eye(3)) < tol
            and abs(np.linalg.det(R) - 1.0) < tol
        )


def euler_to_rotation(angles):
    """Build R = Rz(rz) @ Ry(ry) @ Rx(rx) from Euler angles.

    Accepts an EulerAngles instance or any length-3 sequence (rx, ry, rz).
    """
    if isinstance(angles, EulerAngles):
        rx, ry, rz = angles.rx, angles.ry, angles.rz
    else:
        rx, ry, rz = float(angles[0]), float(angles[1]), float(angles[2])
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def euler_to_rotation_many(angles):
    """Vectorized euler_to_rotation for an (N, 3) array of (rx, ry, rz)."""
    a = np.asarray(angles, dtype=float).reshape(-1, 3)
    cx, sx = np.cos(a[:, 0]), np.sin(a[:, 0])
    cy, sy = np.cos(a[:, 1]), np.sin(a[:, 1])
    cz, sz = np.cos(a[:, 2]), np.sin(a[:, 2])
    R = np.empty((a.shape[0], 3, 3))
    R[:, 0, 0] = cz * cy
    R[:, 0, 1] = cz * sy * sx - sz * cx
    R[:, 0, 2] = cz * sy * cx + sz * sx
    R[:, 1, 0] = sz * cy
    R[:, 1, 1] = sz * sy * sx + cz * cx
    R[:, 1, 2] = sz * sy * cx - cz * sx
    R[:, 2, 0] = -sy
    R[:, 2, 1] = cy * sx
    R[:, 2, 2] = cy * cx
    return R


def rotation_to_euler(R):
    """Recover (rx, ry, rz) with R = Rz @ Ry @ Rx; gimbal lock -> rz = 0."""
    R = np.asarray(R, dtype=float)
    sy = -R[2, 0]
    if abs(sy) < 1.0 - 1e-12:
        ry = math.asin(sy)
        rx = math.atan2(R[2, 1], R[2, 2])
        rz = math.atan2(R[1, 0], R[0, 0])
    else:
        # cos(ry) = 0: rx and rz are coupled, pick rz = 0
        ry = math.copysign(math.pi / 2.0, sy)
        rx = math.atan2(math.copysign(1.0, sy) * R[0, 1], R[1, 1])
        rz = 0.0
    return EulerAngles(rx, ry, rz)


def apply_rigid(points, transform):
    """Apply R @ p + t to a single point (3,) or a batch (..., 3)."""
    p = np.asarray(points, dtype=float)
    return p @ transform.rotation.T + transform.translation


def perspective_project(points, transform, camera, depth_epsilon=DEPTH_EPSILON):
    """Project model points through the pose onto the image plane.

    Returns (u, v) = f*s*(x_c, y_c)/z_c in pixels for each input point.
    Raises DegenerateDepth when any |z_c| <= depth_epsilon.
    """
    cam_pts = apply_rigid(points, transform)
    single = cam_pts.ndim == 1
    cam_pts = np.atleast_2d(cam_pts)
    z = cam_pts[:, 2]
    if np.any(np.abs(z) <= depth_epsilon):
        raise DegenerateDepth(
            f"point depth |z| <= {depth_epsilon} under candidate pose"
        )
    uv = camera.pixel_factor * cam_pts[:, :2] / z[:, None]
    return uv[0] if single else uv


def invert_covariance_2x2(cov, cond_tol=1e-15):
    """Inverse and log-determinant of a symmetric 2x2 covariance.

    Raises SingularCovariance when the determinant is non-positive or the
    matrix is badly conditioned relative to its largest entry.
    """
    c = np.asarray(cov, dtype=float)
    det = c[0, 0] * c[1, 1] - c[0, 1] * c[1, 0]
    scale = max(abs(c).max(), 1.0)
    if not np.isfinite(det) or det <= cond_tol * scale * scale:
        raise SingularCovariance(f"covariance determinant {det} not invertible")
    inv = np.array([[c[1, 1], -c[0, 1]], [-c[1, 0], c[0, 0]]]) / det
    return inv, math.log(det)


def mahalanobis_sq(a, b, cov):
    """Squared Mahalanobis distance (a-b)^T cov^{-1} (a-b)."""
    inv, _ = invert_covariance_2x2(cov)
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(d @ inv @ d)


def rotation_distance_sq(R1, R2):
    """Squared Frobenius norm of the rotation difference."""
    diff = np.asarray(R1, dtype=float) - np.asarray(R2, dtype=float)
    return float(np.sum(diff * diff))
