"""Readers and writers for KITTI labels, calibration, split lists and the
line-oriented prediction interchange format.

Floats are written in KITTI's fixed-point style when that round-trips
exactly, and in shortest round-trip form otherwise, so ``parse(emit(x))``
reproduces every value bit for bit.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .geometry import BoxDims, Box3D, CameraIntrinsics
from .lifting import Detection2D
from .multibin import MultiBinOutput

logger = logging.getLogger(__name__)

PREDICTION_FORMAT = "monolift/v1"
DONTCARE = "DontCare"


class MalformedLine(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MissingKey(ValueError):
    pass


class MalformedMatrix(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class BinCountMismatch(ValueError):
    pass


def format_float(x: float, decimals: int = 2) -> str:
    """Fixed-point with ``decimals`` digits if exact, else shortest round-trip repr."""
    s = f"{x:.{decimals}f}"
    if float(s) == x:
        return s
    return repr(float(x))


def _format_sci(x: float) -> str:
    s = f"{x:.12e}"
    return s if float(s) == x else repr(float(x))


# -- labels -------------------------------------------------------------------

@dataclass(frozen=True)
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple[float, float, float, float]
    dimensions: tuple[float, float, float]      # h, w, l
    location: tuple[float, float, float]        # bottom-center x, y, z
    rotation_y: float
    score: float | None = None

    @property
    def is_dontcare(self) -> bool:
        return self.type == DONTCARE

    @property
    def height_px(self) -> float:
        return self.bbox[3] - self.bbox[1]

    def to_box3d(self) -> Box3D:
        """Box with its geometric center (KITTI locations are bottom centers)."""
        h, w, l = self.dimensions
        x, y, z = self.location
        return Box3D((x, y - h / 2, z), BoxDims.from_hwl(h, w, l), self.rotation_y)

    @classmethod
    def from_box3d(cls, box: Box3D, type: str, bbox, alpha: float, score: float | None = None,
                   truncated: float = 0.0, occluded: int = 0) -> "KittiLabel":
        h, w, l = box.dims.hwl
        x, y, z = box.center
        return cls(type, truncated, occluded, alpha, tuple(bbox), (h, w, l),
                   (x, y + h / 2, z), box.yaw, score)


def _validate_label(lab: KittiLabel, line_no: int):
    if lab.is_dontcare:
        return
    x1, y1, x2, y2 = lab.bbox
    if not (x1 <= x2 and y1 <= y2):
        raise MalformedLine(line_no, f"bbox not ordered: {lab.bbox}")
    for name in ("alpha", "rotation_y"):
        v = getattr(lab, name)
        if not -math.pi <= v <= math.pi:
            raise MalformedLine(line_no, f"{name}={v} outside [-pi, pi]")
    if not 0.0 <= lab.truncated <= 1.0:
        raise MalformedLine(line_no, f"truncated={lab.truncated} outside [0, 1]")
    if lab.occluded not in (0, 1, 2, 3):
        raise MalformedLine(line_no, f"occluded={lab.occluded} not in 0..3")


def parse_label_line(line: str, line_no: int = 1) -> KittiLabel:
    f = line.split()
    if len(f) not in (15, 16):
        raise MalformedLine(line_no, f"expected 15 or 16 fields, got {len(f)}")
    try:
        nums = [float(v) for v in f[1:]]
        occluded = int(f[2])
    except ValueError as e:
        raise MalformedLine(line_no, str(e)) from None
    lab = KittiLabel(
        type=f[0],
        truncated=nums[0],
        occluded=occluded,
        alpha=nums[2],
        bbox=tuple(nums[3:7]),
        dimensions=tuple(nums[7:10]),
        location=tuple(nums[10:13]),
        rotation_y=nums[13],
        score=nums[14] if len(f) == 16 else None,
    )
    _validate_label(lab, line_no)
    return lab


def parse_label_file(text: str) -> list[KittiLabel]:
    return [parse_label_line(line, i) for i, line in enumerate(text.splitlines(), 1) if line.strip()]


def emit_label_line(lab: KittiLabel) -> str:
    fields = [lab.type, format_float(lab.truncated), str(lab.occluded), format_float(lab.alpha)]
    fields += [format_float(v) for v in lab.bbox]
    fields += [format_float(v) for v in lab.dimensions]
    fields += [format_float(v) for v in lab.location]
    fields.append(format_float(lab.rotation_y))
    if lab.score is not None:
        fields.append(format_float(lab.score))
    return " ".join(fields)


def emit_label_file(records: Iterable[KittiLabel]) -> str:
    return "".join(emit_label_line(r) + "\n" for r in records)


def read_label_dir(path: Path) -> dict[int, list[KittiLabel]]:
    out = {}
    for p in sorted(Path(path).glob("*.txt")):
        try:
            out[int(p.stem)] = parse_label_file(p.read_text())
        except MalformedLine as e:
            raise MalformedLine(e.line_no, f"{p}: {e.reason}") from None
    return out


# -- calibration --------------------------------------------------------------

@dataclass(frozen=True)
class KittiCalib:
    """All ``key: values`` entries in file order; ``P2`` is required."""

    matrices: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if "P2" not in self.matrices:
            raise MissingKey("calibration has no P2 entry")
        p2 = self.P2
        if not (p2[0, 0] > 0 and p2[1, 1] > 0):
            raise MalformedMatrix("P2 focal lengths must be positive")

    @property
    def P2(self) -> np.ndarray:
        return np.array(self.matrices["P2"]).reshape(3, 4)

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_projection(self.P2)

    @classmethod
    def from_intrinsics(cls, k: CameraIntrinsics) -> "KittiCalib":
        return cls({"P2": tuple(float(v) for v in k.projection_matrix().reshape(-1))})


def parse_calib_file(text: str) -> KittiCalib:
    matrices: dict[str, tuple[float, ...]] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise MalformedMatrix(f"line {line_no}: no 'key:' prefix")
        try:
            matrices[key.strip()] = tuple(float(v) for v in rest.split())
        except ValueError as e:
            raise MalformedMatrix(f"line {line_no}: {e}") from None
    if "P2" not in matrices:
        raise MissingKey("calibration has no P2 entry")
    if len(matrices["P2"]) != 12:
        raise MalformedMatrix(f"P2 needs 12 values, got {len(matrices['P2'])}")
    return KittiCalib(matrices)


def emit_calib_file(calib: KittiCalib) -> str:
    return "".join(f"{k}: {' '.join(_format_sci(v) for v in vals)}\n"
                   for k, vals in calib.matrices.items())


# -- split lists --------------------------------------------------------------

KITTI_TRAINVAL_FRAMES = 7481
KITTI_TRAIN_FRAMES = 3712
KITTI_VAL_FRAMES = 3769

_FRAME_ID = re.compile(r"^\d+$")


def parse_split(text: str) -> list[int]:
    ids: list[int] = []
    seen: set[int] = set()
    for line_no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if not _FRAME_ID.match(s):
            raise MalformedLine(line_no, f"not a frame id: {s!r}")
        fid = int(s)
        if fid in seen:
            logger.warning("duplicate frame id %06d at line %d ignored", fid, line_no)
            continue
        seen.add(fid)
        ids.append(fid)
    return ids


def emit_split(ids: Sequence[int]) -> str:
    return "".join(f"{i:06d}\n" for i in ids)


# -- prediction interchange ---------------------------------------------------

@dataclass(frozen=True)
class PredictionRecord:
    """One detection with either a MultiBin head output or a local angle."""

    frame: int
    det: Detection2D
    multibin: MultiBinOutput | None = None
    theta_local: float | None = None
    dims: BoxDims | None = None

    def __post_init__(self):
        if (self.multibin is None) == (self.theta_local is None):
            raise ValueError("exactly one of multibin output or theta_local must be given")


def _pred_line(rec: PredictionRecord) -> str:
    d = rec.det
    parts = [f"{rec.frame:06d}", d.class_label] + [repr(float(v)) for v in
                                                  (d.x_min, d.y_min, d.x_max, d.y_max, d.score)]
    if rec.multibin is not None:
        parts += ["mb"] + [repr(float(v)) for v in rec.multibin.to_flat()]
    else:
        parts += ["theta", repr(float(rec.theta_local))]
    if rec.dims is not None:
        parts += ["dims"] + [repr(float(v)) for v in rec.dims.hwl]
    return " ".join(parts)


def write_predictions(records: Iterable[PredictionRecord], stream: TextIO, n_bins: int):
    stream.write(f"{PREDICTION_FORMAT} n={n_bins}\n")
    for rec in records:
        if rec.multibin is not None and rec.multibin.n != n_bins:
            raise BinCountMismatch(f"record has {rec.multibin.n} bins, header declares {n_bins}")
        stream.write(_pred_line(rec) + "\n")


def _parse_header(line: str) -> int:
    m = re.fullmatch(r"(\S+)\s+n=(\d+)", line.strip())
    if not m:
        raise VersionMismatch(f"bad prediction header {line.strip()!r}")
    if m.group(1) != PREDICTION_FORMAT:
        raise VersionMismatch(f"unsupported format {m.group(1)!r}; expected {PREDICTION_FORMAT}")
    return int(m.group(2))


def read_predictions(stream: TextIO) -> tuple[int, list[PredictionRecord]]:
    """Parse a prediction file; returns the header bin count and the records."""
    lines = stream.read().splitlines()
    if not lines:
        raise VersionMismatch("empty prediction file has no header")
    n = _parse_header(lines[0])
    records = []
    for line_no, line in enumerate(lines[1:], 2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        records.append(_parse_pred_line(line, line_no, n))
    return n, records


def _parse_pred_line(line: str, line_no: int, n: int) -> PredictionRecord:
    f = line.split()
    if len(f) < 9:
        raise MalformedLine(line_no, f"expected at least 9 fields, got {len(f)}")
    try:
        frame = int(f[0])
        x0, y0, x1, y1, score = (float(v) for v in f[2:7])
        det = Detection2D(x0, y0, x1, y1, f[1], score)
    except ValueError as e:
        raise MalformedLine(line_no, str(e)) from None
    rest = f[7:]
    dims = None
    if "dims" in rest:
        i = rest.index("dims")
        tail = rest[i + 1:]
        if len(tail) != 3:
            raise MalformedLine(line_no, f"dims needs 3 values (h w l), got {len(tail)}")
        try:
            dims = BoxDims.from_hwl(*(float(v) for v in tail))
        except ValueError as e:
            raise MalformedLine(line_no, str(e)) from None
        rest = rest[:i]
    tag, vals = rest[0], rest[1:]
    try:
        nums = [float(v) for v in vals]
    except ValueError as e:
        raise MalformedLine(line_no, str(e)) from None
    if tag == "mb":
        if len(nums) != 3 * n:
            raise BinCountMismatch(f"line {line_no}: {len(nums)} multibin scalars, header n={n} needs {3 * n}")
        return PredictionRecord(frame, det, multibin=MultiBinOutput.from_flat(nums), dims=dims)
    if tag == "theta":
        if len(nums) != 1:
            raise MalformedLine(line_no, "theta takes exactly one value")
        return PredictionRecord(frame, det, theta_local=nums[0], dims=dims)
    raise MalformedLine(line_no, f"unknown record kind {tag!r}; expected 'mb' or 'theta'")
