"""Pinhole projection math for upright 3D boxes.

Conventions follow the KITTI camera frame: x right, y down, z forward.
Yaw is KITTI ``rotation_y``, a rotation about the camera y axis; at yaw 0
the object's x axis (its heading) points along the camera x axis.

Corner order
------------
``corners_local`` returns the 8 box corners indexed by a 3-bit pattern
``b2 b1 b0``.  Bit 0 selects the x sign, bit 1 the y sign and bit 2 the z
sign; a cleared bit means ``+`` and a set bit means ``-``::

    index  0  1  2  3  4  5  6  7
    x      +  -  +  -  +  -  +  -
    y      +  +  -  -  +  +  -  -
    z      +  +  +  +  -  -  -  -

With y pointing down, even-``b1`` corners (0, 1, 4, 5) lie on the bottom
face and odd-``b1`` corners (2, 3, 6, 7) on the top face.  Corners that
differ only in bit 1 share a vertical edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Pairs of corner indices joined by a box edge (indices differ in one bit).
BOX_EDGES: tuple[tuple[int, int], ...] = tuple(
    (i, i | bit) for bit in (1, 2, 4) for i in range(8) if not i & bit
)

_CORNER_SIGNS = np.array(
    [[1.0 - 2.0 * ((k >> b) & 1) for b in range(3)] for k in range(8)]
)


class PointBehindCamera(ValueError):
    """A point projects with non-positive depth."""


def wrap_angle(x):
    """Wrap an angle (scalar or array) into ``[-pi, pi)``.

    Exactly ``+pi`` maps to ``-pi``.
    """
    if np.ndim(x) == 0:
        y = math.fmod(float(x) + math.pi, TWO_PI)
        if y < 0.0:
            y += TWO_PI
        y -= math.pi
        return -math.pi if y >= math.pi else y
    y = np.mod(np.asarray(x, dtype=float) + math.pi, TWO_PI) - math.pi
    return np.where(y >= math.pi, -math.pi, y)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with an optional fourth projection column.

    ``t`` is the last column of a KITTI ``P2`` matrix (the stereo baseline
    offset, in metre-pixels).  It is zero for a plain ``K``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    t: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))

    @classmethod
    def from_projection(cls, p) -> "CameraIntrinsics":
        """Build from a 3x4 projection matrix such as KITTI ``P2``."""
        p = np.asarray(p, dtype=float).reshape(3, 4)
        if p[0, 1] != 0.0 or p[1, 0] != 0.0 or tuple(p[2, :3]) != (0.0, 0.0, 1.0):
            raise ValueError("projection matrix is not of the form [K | t] with zero skew")
        return cls(p[0, 0], p[1, 1], p[0, 2], p[1, 2], tuple(p[:, 3]))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def projection_matrix(self) -> np.ndarray:
        """The 3x4 matrix ``[K | t]``."""
        return np.column_stack([self.K, self.t])


@dataclass(frozen=True)
class BoxDims:
    """Box extents along the object x, y and z axes (metres).

    ``dx`` runs along the heading, ``dy`` is the height and ``dz`` the
    lateral extent, so a KITTI label's ``(h, w, l)`` maps to
    ``BoxDims(dx=l, dy=h, dz=w)``.
    """

    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0 and self.dz > 0):
            raise ValueError(f"box dimensions must be positive, got {self}")

    @classmethod
    def from_hwl(cls, h: float, w: float, l: float) -> "BoxDims":
        return cls(dx=l, dy=h, dz=w)

    @property
    def hwl(self) -> tuple[float, float, float]:
        return (self.dy, self.dz, self.dx)

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz])


@dataclass(frozen=True)
class Orientation:
    """Azimuth, elevation and roll.  Only the azimuth may be non-zero."""

    theta: float
    phi: float = 0.0
    alpha_roll: float = 0.0

    def __post_init__(self):
        if self.phi != 0.0 or self.alpha_roll != 0.0:
            raise ValueError("only upright boxes are supported: elevation and roll must be 0")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class Pose:
    orientation: Orientation
    t: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))

    @classmethod
    def from_yaw(cls, yaw: float, t: Sequence[float]) -> "Pose":
        return cls(Orientation(yaw), tuple(t))

    @property
    def yaw(self) -> float:
        return self.orientation.theta

    @property
    def rotation(self) -> np.ndarray:
        return rotation_from_yaw(self.yaw)


@dataclass(frozen=True)
class PixelPoint:
    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("pixel coordinates must be finite")


@dataclass(frozen=True)
class Rect:
    """Axis-aligned image rectangle."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])

    def contains(self, u: float, v: float, tol: float = 0.0) -> bool:
        return (self.x_min - tol <= u <= self.x_max + tol
                and self.y_min - tol <= v <= self.y_max + tol)


@dataclass(frozen=True)
class Box3D:
    """An upright 3D box: geometric center (camera frame), extents and yaw."""

    center: tuple[float, float, float]
    dims: BoxDims
    yaw: float
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    @property
    def pose(self) -> Pose:
        return Pose.from_yaw(self.yaw, self.center)

    def corners(self) -> np.ndarray:
        """Camera-frame corners, shape (8, 3), in the module corner order."""
        return corners_local(self.dims) @ rotation_from_yaw(self.yaw).T + np.asarray(self.center)


def corners_local(dims: BoxDims) -> np.ndarray:
    """Object-frame corners, shape (8, 3); see the module docstring for order."""
    return _CORNER_SIGNS * (0.5 * dims.as_array())


def rotation_from_yaw(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def dehomogenize(xh: np.ndarray) -> np.ndarray:
    """Perspective divide of homogeneous image points, shape (..., 3) -> (..., 2)."""
    xh = np.asarray(xh, dtype=float)
    return xh[..., :2] / xh[..., 2:3]


def project_camera_points(k: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Project camera-frame points (..., 3) to pixels (..., 2).

    Raises PointBehindCamera if any point has depth <= 0.
    """
    xh = np.asarray(pts, dtype=float) @ k.K.T + np.asarray(k.t)
    if np.any(~(xh[..., 2] > 0.0)):
        raise PointBehindCamera("point has non-positive depth")
    return dehomogenize(xh)


def project_point(k: CameraIntrinsics, pose: Pose, x_obj) -> PixelPoint:
    cam = pose.rotation @ np.asarray(x_obj, dtype=float) + np.asarray(pose.t)
    u, v = project_camera_points(k, cam)
    return PixelPoint(float(u), float(v))


def project_box(k: CameraIntrinsics, pose: Pose, dims: BoxDims) -> tuple[list[PixelPoint], Rect]:
    """Project the 8 box corners and return them with their tight bounding rectangle."""
    cam = corners_local(dims) @ pose.rotation.T + np.asarray(pose.t)
    uv = project_camera_points(k, cam)
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    points = [PixelPoint(float(u), float(v)) for u, v in uv]
    return points, Rect(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def ray_angle(k: CameraIntrinsics, u: float) -> float:
    """Horizontal angle of the viewing ray through image column ``u``."""
    return math.atan2(u - k.cx, k.fx)


def global_from_local(theta_local: float, theta_ray: float) -> float:
    return wrap_angle(theta_ray + theta_local)


def local_from_global(theta: float, theta_ray: float) -> float:
    return wrap_angle(theta - theta_ray)
