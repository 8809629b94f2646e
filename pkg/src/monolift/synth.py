"""Random synthetic scenes with known ground truth.

A scene is a random camera, box and pose whose projection lies fully inside
the image; the detection is the box's exact tight projected rectangle.
Used by the ``synth`` command and by the round-trip tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BoxDims, CameraIntrinsics, Pose, Rect, local_from_global, project_box, ray_angle
from .lifting import Detection2D

IMAGE_SIZE = (1242, 375)

# (h, w, l) ranges in metres, loosely covering KITTI classes.
CLASS_DIM_RANGES = {
    "Car": ((1.3, 1.9), (1.5, 2.0), (3.3, 5.0)),
    "Pedestrian": ((1.5, 1.95), (0.45, 0.8), (0.5, 1.1)),
    "Cyclist": ((1.5, 1.9), (0.5, 0.8), (1.5, 1.9)),
}


@dataclass(frozen=True)
class Scene:
    k: CameraIntrinsics
    pose: Pose
    dims: BoxDims
    det: Detection2D
    class_label: str

    @property
    def theta_local(self) -> float:
        """Local angle relative to the ray through the detection center."""
        return local_from_global(self.pose.yaw, ray_angle(self.k, self.det.center_u))


def random_camera(rng: np.random.Generator) -> CameraIntrinsics:
    f = rng.uniform(650.0, 800.0)
    return CameraIntrinsics(f, f * rng.uniform(0.98, 1.02),
                            rng.uniform(580.0, 660.0), rng.uniform(160.0, 200.0))


def random_scene(rng: np.random.Generator, image_size=IMAGE_SIZE, k: CameraIntrinsics | None = None,
                 class_label: str | None = None, max_tries: int = 1000) -> Scene:
    """Rejection-sample a box fully inside the image with depth in [5, 60] m."""
    if k is None:
        k = random_camera(rng)
    if class_label is None:
        class_label = str(rng.choice(list(CLASS_DIM_RANGES)))
    (hl, hh), (wl, wh), (ll, lh) = CLASS_DIM_RANGES[class_label]
    dims = BoxDims.from_hwl(rng.uniform(hl, hh), rng.uniform(wl, wh), rng.uniform(ll, lh))
    w, h = image_size
    for _ in range(max_tries):
        yaw = rng.uniform(-math.pi, math.pi)
        tz = rng.uniform(5.0, 60.0)
        tx = rng.uniform(-0.6, 0.6) * tz * (w / 2) / k.fx
        ty = rng.uniform(1.0, 2.2) - dims.dy / 2
        pose = Pose.from_yaw(yaw, (tx, ty, tz))
        _, rect = project_box(k, pose, dims)
        if rect.x_min >= 0 and rect.y_min >= 0 and rect.x_max <= w - 1 and rect.y_max <= h - 1:
            det = Detection2D(rect.x_min, rect.y_min, rect.x_max, rect.y_max, class_label, 1.0)
            return Scene(k, pose, dims, det, class_label)
    raise RuntimeError("could not place a box inside the image")


def perturb(det: Detection2D, unit_noise: np.ndarray, amplitude: float) -> Detection2D:
    """Shift the four sides by ``amplitude * unit_noise`` (x_min, y_min, x_max, y_max)."""
    x0, y0, x1, y1 = det.as_array() + amplitude * np.asarray(unit_noise)
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x0 + 0.5
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y0 + 0.5
    return Detection2D(x0, y0, x1, y1, det.class_label, det.score)


def rect_of(scene: Scene) -> Rect:
    return project_box(scene.k, scene.pose, scene.dims)[1]
