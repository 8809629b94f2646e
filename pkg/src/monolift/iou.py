"""3D IoU of upright (yaw-only) boxes.

The footprints are intersected in bird's-eye view (the camera x-z plane)
with Sutherland-Hodgman clipping, then multiplied by the vertical overlap.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import Box3D


def bev_polygon(box: Box3D) -> np.ndarray:
    """Footprint corners in the x-z plane, counter-clockwise, shape (4, 2)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hx, hz = box.dims.dx / 2, box.dims.dz / 2
    local = np.array([[hx, hz], [-hx, hz], [-hx, -hz], [hx, -hz]])
    # x' = c*x + s*z, z' = -s*x + c*z (rotation about y, restricted to x-z)
    rot = np.array([[c, s], [-s, c]])
    pts = local @ rot.T + np.array([box.center[0], box.center[2]])
    if polygon_area(pts, signed=True) < 0:
        pts = pts[::-1]
    return pts


def polygon_area(poly, signed: bool = False) -> float:
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    a = 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return a if signed else abs(a)


def clip_convex(subject, clip) -> list[tuple[float, float]]:
    """Intersection of convex polygon ``subject`` with convex CCW polygon ``clip``."""
    out = [tuple(p) for p in subject]
    clip = [tuple(p) for p in clip]
    for i in range(len(clip)):
        if not out:
            break
        a, b = clip[i - 1], clip[i]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_cross_point(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_cross_point(prev, cur, sp, sc))
            prev, sp = cur, sc
    return out


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    return polygon_area(clip_convex(bev_polygon(a), bev_polygon(b)))


def volume(box: Box3D) -> float:
    return box.dims.dx * box.dims.dy * box.dims.dz


def iou3d(a: Box3D, b: Box3D) -> float:
    ya0, ya1 = a.center[1] - a.dims.dy / 2, a.center[1] + a.dims.dy / 2
    yb0, yb1 = b.center[1] - b.dims.dy / 2, b.center[1] + b.dims.dy / 2
    h = min(ya1, yb1) - max(ya0, yb0)
    if h <= 0:
        return 0.0
    # cheap reject on circumscribed circles
    ra = math.hypot(a.dims.dx, a.dims.dz) / 2
    rb = math.hypot(b.dims.dx, b.dims.dz) / 2
    if math.hypot(a.center[0] - b.center[0], a.center[2] - b.center[2]) >= ra + rb:
        return 0.0
    inter = bev_intersection_area(a, b) * h
    union = volume(a) + volume(b) - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))
