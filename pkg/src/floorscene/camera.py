"""Pinhole camera intrinsics and SE(3) pose helpers.

Conventions used throughout the package:
  - World frame: floor plane is z=0, height axis is +z, lengths in meters.
  - Camera frame: x right, y down, z forward (optical axis).
  - Poses are 4x4 camera-to-world matrices.
  - Depth maps store z-depth (distance along the optical axis), 0 = invalid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_UP = np.array([0.0, 0.0, 1.0])


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
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width, height, fov_deg=90.0):
        """Square-pixel intrinsics from a horizontal field of view."""
        fx = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
        return cls(fx=fx, fy=fx, cx=width / 2.0 - 0.5, cy=height / 2.0 - 0.5,
                   width=width, height=height)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                   width=int(d["width"]), height=int(d["height"]))

    def pixel_rays(self):
        """Unit-z camera-frame ray directions, shape (H, W, 3).

        Pixel (row, col) is treated as the continuous image point (col, row),
        so ray parameter equals z-depth.
        """
        u = np.arange(self.width, dtype=np.float64)
        v = np.arange(self.height, dtype=np.float64)
        uu, vv = np.meshgrid(u, v)
        d = np.stack([(uu - self.cx) / self.fx,
                      (vv - self.cy) / self.fy,
                      np.ones_like(uu)], axis=-1)
        return d


def validate_pose(P, tol=1e-6):
    """Check P is a 4x4 SE(3) matrix; raises ValueError otherwise."""
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (4, 4):
        raise ValueError(f"pose must be 4x4, got {P.shape}")
    R = P[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=tol):
        raise ValueError("rotation block is not orthonormal")
    if np.linalg.det(R) < 0:
        raise ValueError("rotation block has negative determinant")
    if not np.array_equal(P[3], [0.0, 0.0, 0.0, 1.0]):
        raise ValueError("last row must be [0,0,0,1]")
    return P


def pose_from_yaw(x, y, z, yaw):
    """Camera-to-world pose at (x,y,z) with optical axis horizontal at `yaw`.

    yaw=0 looks along +x; image y axis points down (-z world).
    """
    c, s = np.cos(yaw), np.sin(yaw)
    P = np.eye(4)
    # columns: camera x (right), y (down), z (forward) in world coords
    P[:3, 0] = [s, -c, 0.0]
    P[:3, 1] = [0.0, 0.0, -1.0]
    P[:3, 2] = [c, s, 0.0]
    P[:3, 3] = [x, y, z]
    return P


def look_at_pose(position, target):
    """Camera-to-world pose at `position` with optical axis toward `target`."""
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    n = np.linalg.norm(z)
    if n < 1e-9:
        raise ValueError("look-at target coincides with camera position")
    z = z / n
    if abs(z @ _UP) > 1.0 - 1e-9:
        x = np.array([1.0, 0.0, 0.0])  # straight up/down: pick arbitrary right
    else:
        x = np.cross(z, _UP)
        x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    P = np.eye(4)
    P[:3, 0] = x
    P[:3, 1] = y
    P[:3, 2] = z
    P[:3, 3] = position
    return P


def rotation_angle_deg(Pa, Pb):
    """Geodesic angle in degrees between the rotations of two poses."""
    R = Pa[:3, :3].T @ Pb[:3, :3]
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def pose_to_list(P):
    return [float(v) for v in np.asarray(P, dtype=np.float64).reshape(16)]


def pose_from_list(vals):
    P = np.asarray(vals, dtype=np.float64).reshape(4, 4)
    return validate_pose(P)
