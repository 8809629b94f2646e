"""Monocular 3D box lifting from 2D detections and MultiBin orientations,
with KITTI I/O and KITTI-style evaluation."""

from .geometry import (
    Box3D,
    BoxDims,
    CameraIntrinsics,
    Orientation,
    PixelPoint,
    PointBehindCamera,
    Pose,
    Rect,
    corners_local,
    global_from_local,
    local_from_global,
    project_box,
    project_point,
    ray_angle,
    rotation_from_yaw,
    wrap_angle,
)
from .lifting import Correspondence, Detection2D, LiftResult, lift, lift_with_multibin
from .multibin import BinLayout, MultiBinOutput, decode, encode, make_layout

__version__ = "0.1.0"
