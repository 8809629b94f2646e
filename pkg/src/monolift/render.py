"""Static SVG wireframe overlay of labelled 3D boxes."""

from __future__ import annotations

import logging
from typing import Sequence

from .geometry import BOX_EDGES, CameraIntrinsics, PointBehindCamera, project_camera_points
from .kitti_io import KittiLabel

logger = logging.getLogger(__name__)

COLORS = {"Car": "#e6194b", "Pedestrian": "#3cb44b", "Cyclist": "#4363d8"}
DEFAULT_COLOR = "#f58231"


def render_svg(k: CameraIntrinsics, labels: Sequence[KittiLabel], image_size: tuple[int, int]) -> str:
    """One ``<g>`` of 12 edge lines per box.  Boxes with a corner behind the camera are skipped."""
    w, h = image_size
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">']
    for i, lab in enumerate(labels):
        if lab.is_dontcare:
            continue
        try:
            uv = project_camera_points(k, lab.to_box3d().corners())
        except PointBehindCamera:
            logger.warning("box %d (%s) is behind the camera; skipped", i, lab.type)
            continue
        color = COLORS.get(lab.type, DEFAULT_COLOR)
        out.append(f'<g class="{lab.type}" stroke="{color}" stroke-width="1.5" fill="none">')
        for a, b in BOX_EDGES:
            out.append(f'<line x1="{uv[a, 0]:.2f}" y1="{uv[a, 1]:.2f}" '
                       f'x2="{uv[b, 0]:.2f}" y2="{uv[b, 1]:.2f}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
