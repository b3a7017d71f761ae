"""Camera model, depth unprojection, and rigid-transform algebra.

Conventions used throughout the package:

* pixel coordinates are (u, v) = (column, row), origin at the top-left,
  pixel centers at integer coordinates;
* a depth image is an (H, W) float64 array of z in meters, 0.0 marks an
  invalid pixel (no epsilon band);
* a color image is an (H, W, 3) float64 array with values in [0, 1];
* all geometry is computed in 64-bit floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError

ROT_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths, principal point, image size (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInputError("principal point must lie inside the image")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image size must be at least 1x1")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for the same camera at a resized image (factor < 1 shrinks)."""
        return CameraIntrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
        )


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation pair; maps p to R @ p + t."""

    R: np.ndarray  # (3, 3) float64
    t: np.ndarray  # (3,) float64

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise InvalidInputError("expected (3,3) rotation and (3,) translation")
        if not (np.isfinite(R).all() and np.isfinite(t).all()):
            raise InvalidInputError("transform entries must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6:
            raise InvalidInputError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise InvalidInputError("rotation must have determinant +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R.T + self.t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: compose(T1, T2)(p) = T1(T2(p))."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def invert(self) -> "RigidTransform":
        Rt = self.R.T
        return RigidTransform(Rt, -Rt @ self.t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidInputError("expected a 4x4 matrix")
        return RigidTransform(m[:3, :3], m[:3, 3])


def compose(t1: RigidTransform, t2: RigidTransform) -> RigidTransform:
    return t1.compose(t2)


def invert(t: RigidTransform) -> RigidTransform:
    return t.invert()


@dataclass
class PointCloud:
    """3D points with their originating pixels and optional per-point colors.

    ``source_pixel`` holds integer (u, v) per point; only pixels with z > 0
    ever produce points.
    """

    points: np.ndarray                       # (N, 3) float64
    source_pixel: np.ndarray | None = None   # (N, 2) int64, columns (u, v)
    colors: np.ndarray | None = None         # (N, 3) float64 in [0, 1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, T: RigidTransform) -> "PointCloud":
        return PointCloud(T.apply(self.points), self.source_pixel, self.colors)


def validate_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise InvalidInputError("depth image must be a 2D array")
    if not np.isfinite(depth).all():
        raise InvalidInputError("depth image contains non-finite values")
    if (depth < 0).any():
        raise InvalidInputError("depth values must be >= 0")
    return depth


def validate_color(color: np.ndarray) -> np.ndarray:
    color = np.asarray(color, dtype=np.float64)
    if color.ndim != 3 or color.shape[2] != 3:
        raise InvalidInputError("color image must be (H, W, 3)")
    if not np.isfinite(color).all() or color.min() < 0 or color.max() > 1:
        raise InvalidInputError("color values must be in [0, 1]")
    return color


def unproject_depth(
    depth: np.ndarray,
    intr: CameraIntrinsics,
    color: np.ndarray | None = None,
) -> PointCloud:
    """Lift every valid (z > 0) pixel to a 3D point in the camera frame.

    Points come out in row-major pixel scan order. Zero-depth pixels emit
    nothing.
    """
    depth = validate_depth(depth)
    if depth.shape != (intr.height, intr.width):
        raise InvalidInputError(
            f"depth shape {depth.shape} does not match intrinsics "
            f"({intr.height}, {intr.width})"
        )
    v, u = np.nonzero(depth > 0)
    z = depth[v, u]
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    points = np.stack([x, y, z], axis=1)
    pixels = np.stack([u, v], axis=1).astype(np.int64)
    cols = None
    if color is not None:
        color = validate_color(color)
        if color.shape[:2] != depth.shape:
            raise InvalidInputError("color and depth dimensions differ")
        cols = color[v, u]
    return PointCloud(points=points, source_pixel=pixels, colors=cols)


def project_points(points: np.ndarray, intr: CameraIntrinsics):
    """Project (N, 3) points; returns (u, v, valid).

    valid requires z > 0 and the continuous (u, v) to fall inside the image
    (pixel centers at integers, so the valid range is [0, width-1]).
    """
    pts = np.asarray(points, dtype=np.float64)
    z = pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * pts[..., 0] / z + intr.cx
        v = intr.fy * pts[..., 1] / z + intr.cy
    valid = (z > 0) & (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)
    u = np.where(z > 0, u, 0.0)
    v = np.where(z > 0, v, 0.0)
    return u, v, valid


def project_point(p, intr: CameraIntrinsics):
    """Single-point convenience wrapper around project_points."""
    u, v, valid = project_points(np.asarray(p, dtype=np.float64)[None, :], intr)
    return float(u[0]), float(v[0]), bool(valid[0])


def apply_transform(T: RigidTransform, cloud: PointCloud) -> PointCloud:
    return cloud.transformed(T)


def rotation_about_axis(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        raise InvalidInputError("rotation axis must be nonzero")
    k = axis / n
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * K + (1 - np.cos(angle_rad)) * (K @ K)


def random_rigid_transform(rng: np.random.Generator, max_angle_rad: float = np.pi,
                           max_translation: float = 1.0) -> RigidTransform:
    """Seeded random transform; uniform axis, uniform angle in [0, max]."""
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-12:
        axis = rng.normal(size=3)
    angle = rng.uniform(0.0, max_angle_rad)
    R = rotation_about_axis(axis, angle)
    t = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(R, t)
