"""Recover a 3D box translation from a 2D detection, a yaw and box dimensions.

Every side of the detection rectangle must be touched by the projection of
one box corner.  Fixing which corner touches which side (a correspondence)
turns each side into one linear equation in the translation ``T``:

    (P_row - s * P_row3) . [R X_i + T; 1] = 0

with ``P_row`` the first projection row for vertical sides (s = u) and the
second for horizontal sides (s = v).  The coefficient matrix depends on the
detection only, so it is factored once and every candidate correspondence
is solved against it in a single batch.  Candidates are ranked by how well
their reprojected tight rectangle matches the detection.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import (
    BoxDims,
    CameraIntrinsics,
    Pose,
    Rect,
    corners_local,
    global_from_local,
    ray_angle,
    rotation_from_yaw,
)
from .multibin import BinLayout, MultiBinOutput, decode

SIDES = ("x_min", "x_max", "y_min", "y_max")
MODES = ("exhaustive", "pruned")

MIN_DEPTH = 0.1          # metres; nearer solutions are discarded
RANK_RTOL = 1e-10
TIE_TOL = 1e-12

# Corners on the bottom (+y, image-down) and top faces; see geometry docs.
BOTTOM_CORNERS = (0, 1, 4, 5)
TOP_CORNERS = (2, 3, 6, 7)


class RankDeficient(ValueError):
    pass


class NoValidSolution(ValueError):
    pass


@dataclass(frozen=True)
class Detection2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_label: str = "Car"
    score: float = 1.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate detection box {self.as_array().tolist()}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def center_u(self) -> float:
        return 0.5 * (self.x_min + self.x_max)

    def side(self, name: str) -> float:
        return getattr(self, name)

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])

    def sides_array(self, sides: Sequence[str] = SIDES) -> np.ndarray:
        return np.array([getattr(self, s) for s in sides])


@dataclass(frozen=True)
class Correspondence:
    """Corner index touching each detection side."""

    x_min: int
    x_max: int
    y_min: int
    y_max: int

    def __post_init__(self):
        for s in SIDES:
            if not 0 <= getattr(self, s) <= 7:
                raise ValueError(f"corner index for {s} out of range: {getattr(self, s)}")

    def corner(self, side: str) -> int:
        return getattr(self, side)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)


@dataclass(frozen=True)
class ConstraintSystem:
    """``A @ T = b``, one row per constrained side."""

    A: np.ndarray
    b: np.ndarray
    sides: tuple[str, ...] = SIDES


@dataclass(frozen=True)
class LiftResult:
    pose: Pose
    chosen: Correspondence
    residual: float              # algebraic least-squares residual
    reprojected_box: Rect
    rect_error: float            # L2 distance between detection and reprojected sides (px)
    dims: BoxDims
    meta: dict = field(default_factory=dict, compare=False)


def enumerate_configs(mode: str = "pruned", yaw: float | None = None) -> tuple[Correspondence, ...]:
    """Candidate corner-to-side correspondences.

    ``exhaustive`` yields all 8**4 assignments.  ``pruned`` merges corners
    that give identical constraint rows for an upright box: both corners of
    a vertical edge project to the same column, so each vertical side picks
    one of 4 edges; the top side is always touched by a top corner and the
    bottom side by a bottom corner.  When ``yaw`` is given, the top and
    bottom sides are further restricted to the nearest or farthest vertical
    edge (in depth), which the yaw alone determines: 4 * 4 * 2 * 2 = 64.
    Without ``yaw`` the pruned set has 4**4 = 256 entries.
    """
    if mode == "exhaustive":
        return _exhaustive()
    if mode != "pruned":
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if yaw is None:
        return _pruned(None)
    return _pruned(_depth_quadrant(yaw))


@functools.lru_cache(maxsize=None)
def _exhaustive() -> tuple[Correspondence, ...]:
    return tuple(Correspondence(*c) for c in itertools.product(range(8), repeat=4))


def _depth_quadrant(yaw: float) -> tuple[int, int]:
    # Depth offset of edge (sx, sz) is -sin(yaw)*sx*dx/2 + cos(yaw)*sz*dz/2;
    # the nearest edge has sx = sign(sin), sz = -sign(cos).  Bit set = minus.
    s, c = math.sin(yaw), math.cos(yaw)
    return (0 if s >= 0 else 1, 1 if c >= 0 else 0)


@functools.lru_cache(maxsize=None)
def _pruned(quadrant: tuple[int, int] | None) -> tuple[Correspondence, ...]:
    if quadrant is None:
        tops, bottoms = TOP_CORNERS, BOTTOM_CORNERS
    else:
        b0, b2 = quadrant
        near = b0 | (b2 << 2)
        far = near ^ 0b101
        tops = (near | 2, far | 2)
        bottoms = (near, far)
    return tuple(
        Correspondence(xa, xb, ya, yb)
        for xa, xb, ya, yb in itertools.product(BOTTOM_CORNERS, BOTTOM_CORNERS, tops, bottoms)
    )


def _side_rows(k: CameraIntrinsics, det: Detection2D, sides: Sequence[str]) -> np.ndarray:
    """Homogeneous constraint rows (m, 4) acting on [R X + T; 1]."""
    p = k.projection_matrix()
    rows = []
    for s in sides:
        val = det.side(s)
        rows.append(p[0] - val * p[2] if s.startswith("x") else p[1] - val * p[2])
    return np.array(rows)


def build_constraint_system(k: CameraIntrinsics, yaw: float, dims: BoxDims, det: Detection2D,
                            corr: Correspondence, sides: Sequence[str] = SIDES) -> ConstraintSystem:
    rows = _side_rows(k, det, sides)
    offsets = corners_local(dims) @ rotation_from_yaw(yaw).T
    x = offsets[[corr.corner(s) for s in sides]]
    A = rows[:, :3]
    b = -(np.einsum("ij,ij->i", A, x) + rows[:, 3])
    return ConstraintSystem(A, b, tuple(sides))


def _factor(A: np.ndarray):
    if A.shape[0] < 3:
        raise RankDeficient(f"{A.shape[0]} constraints cannot fix 3 translation components")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise RankDeficient(f"constraint matrix is rank deficient (singular values {s})")
    return U, s, Vt


def solve_translation(system: ConstraintSystem) -> tuple[np.ndarray, float]:
    """Least-squares ``T`` via SVD, and the root of the residual sum of squares."""
    U, s, Vt = _factor(np.asarray(system.A, dtype=float))
    t = Vt.T @ ((U.T @ system.b) / s)
    return t, float(np.linalg.norm(system.A @ t - system.b))


def border_sides(det: Detection2D, image_size: tuple[float, float], margin: float = 1.0) -> tuple[str, ...]:
    """Sides of ``det`` lying within ``margin`` px of the image border."""
    w, h = image_size
    out = []
    if det.x_min <= margin:
        out.append("x_min")
    if det.x_max >= w - 1 - margin:
        out.append("x_max")
    if det.y_min <= margin:
        out.append("y_min")
    if det.y_max >= h - 1 - margin:
        out.append("y_max")
    return tuple(out)


@functools.lru_cache(maxsize=256)
def _config_table(configs: tuple[Correspondence, ...], sides: tuple[str, ...]):
    """Corner-index table (N, m) for ``sides``, with duplicate rows removed."""
    table = np.array([[c.corner(s) for s in sides] for c in configs], dtype=np.intp)
    if len(sides) == len(SIDES):
        return table, np.arange(len(configs))
    _, first = np.unique(table, axis=0, return_index=True)
    first = np.sort(first)
    return table[first], first


def lift(k: CameraIntrinsics, yaw: float, dims: BoxDims, det: Detection2D,
         mode: str = "pruned", drop_sides: Sequence[str] = ()) -> LiftResult:
    """Best translation over all candidate correspondences.

    Candidates with non-finite ``T``, depth below ``MIN_DEPTH`` or any corner
    behind the camera are discarded.  The survivor whose tight reprojected
    rectangle is closest (L2 over the constrained sides) to ``det`` wins;
    ties within ``TIE_TOL`` go to the earliest enumerated candidate.
    """
    sides = tuple(s for s in SIDES if s not in set(drop_sides))
    configs = enumerate_configs(mode, yaw)
    table, origin = _config_table(configs, sides)

    rows = _side_rows(k, det, sides)
    A = rows[:, :3]
    U, s, Vt = _factor(A)

    offsets = corners_local(dims) @ rotation_from_yaw(yaw).T           # (8, 3)
    x = offsets[table]                                                  # (N, m, 3)
    B = -(np.einsum("mj,nmj->nm", A, x) + rows[:, 3])                   # (N, m)
    T = ((B @ U) / s) @ Vt                                              # (N, 3)
    alg = np.linalg.norm(T @ A.T - B, axis=1)

    cam = offsets[None, :, :] + T[:, None, :]                           # (N, 8, 3)
    xh = cam @ k.K.T + np.asarray(k.t)
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = xh[..., :2] / xh[..., 2:3]
    valid = (np.all(np.isfinite(T), axis=1) & (T[:, 2] > MIN_DEPTH)
             & np.all(xh[..., 2] > 0.0, axis=1))
    if not valid.any():
        raise NoValidSolution(f"no correspondence places the box in front of the camera ({det})")

    rect = np.concatenate([uv.min(axis=1), uv.max(axis=1)], axis=1)    # x_min, y_min, x_max, y_max
    col = {"x_min": 0, "y_min": 1, "x_max": 2, "y_max": 3}
    cols = [col[s] for s in sides]
    err = np.linalg.norm(rect[:, cols] - det.sides_array(sides), axis=1)
    err = np.where(valid, err, np.inf)
    best = int(np.flatnonzero(err <= err.min() + TIE_TOL)[0])

    r = rect[best]
    return LiftResult(
        pose=Pose.from_yaw(yaw, T[best]),
        chosen=configs[int(origin[best])],
        residual=float(alg[best]),
        reprojected_box=Rect(*(float(v) for v in r)),
        rect_error=float(err[best]),
        dims=dims,
        meta={"mode": mode, "n_candidates": len(table), "sides": sides},
    )


def resolve_dims(det: Detection2D, dims_source: BoxDims | Mapping[str, BoxDims]) -> tuple[BoxDims, str]:
    """Explicit dimensions, or the prior-table entry for ``det.class_label``."""
    if isinstance(dims_source, BoxDims):
        return dims_source, "explicit"
    try:
        return dims_source[det.class_label], f"prior:{det.class_label}"
    except KeyError:
        raise KeyError(f"no dimension prior for class {det.class_label!r}") from None


def lift_local(k: CameraIntrinsics, det: Detection2D, theta_local: float,
               dims_source: BoxDims | Mapping[str, BoxDims], mode: str = "pruned",
               drop_sides: Sequence[str] = ()) -> LiftResult:
    """Lift with a local (ray-relative) orientation."""
    theta_ray = ray_angle(k, det.center_u)
    yaw = global_from_local(theta_local, theta_ray)
    dims, origin = resolve_dims(det, dims_source)
    res = lift(k, yaw, dims, det, mode=mode, drop_sides=drop_sides)
    res.meta.update(theta_local=theta_local, theta_ray=theta_ray, dims_source=origin)
    return res


def lift_with_multibin(k: CameraIntrinsics, det: Detection2D, output: MultiBinOutput,
                       layout: BinLayout, dims_source: BoxDims | Mapping[str, BoxDims],
                       mode: str = "pruned", drop_sides: Sequence[str] = ()) -> LiftResult:
    return lift_local(k, det, decode(output, layout), dims_source, mode=mode, drop_sides=drop_sides)
