"""KITTI-style 3D detection metrics: difficulty gates, greedy matching,
AP and AOS over 40 recall points, orientation score and mean 3D IoU.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import wrap_angle
from .iou import iou3d
from .kitti_io import KittiLabel, read_label_dir

CLASSES = ("Car", "Pedestrian", "Cyclist")
DEFAULT_IOU_THRESHOLDS = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
N_RECALL_POINTS = 40

# KITTI neighbouring classes, ignored instead of counted as misses when enabled.
NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}


class NoGroundTruth(ValueError):
    pass


class UndefinedScore(ValueError):
    pass


class FrameMismatch(ValueError):
    pass


@dataclass(frozen=True)
class DifficultyLevel:
    name: str
    min_height: float
    max_truncation: float
    max_occlusion: int

    def admits(self, lab: KittiLabel) -> bool:
        return (lab.height_px >= self.min_height
                and lab.truncated <= self.max_truncation
                and lab.occluded <= self.max_occlusion)


EASY = DifficultyLevel("Easy", 40.0, 0.15, 0)
MODERATE = DifficultyLevel("Moderate", 25.0, 0.30, 1)
HARD = DifficultyLevel("Hard", 25.0, 0.50, 2)
DIFFICULTIES = (EASY, MODERATE, HARD)


def filter_difficulty(labels: Sequence[KittiLabel], level: DifficultyLevel
                      ) -> tuple[list[KittiLabel], list[KittiLabel]]:
    """Split ground truths into (evaluable, ignored).  DontCare is always ignored."""
    keep, ignored = [], []
    for lab in labels:
        (keep if not lab.is_dontcare and level.admits(lab) else ignored).append(lab)
    return keep, ignored


@dataclass
class Detection:
    score: float
    tp: bool
    orientation_error: float | None = None   # rad, TPs only
    iou: float | None = None                 # TPs only


@dataclass
class MatchSet:
    """Counted detections of one frame (ignored matches already dropped)."""

    detections: list[Detection] = field(default_factory=list)
    n_gt: int = 0

    @property
    def n_tp(self) -> int:
        return sum(d.tp for d in self.detections)

    @property
    def n_fp(self) -> int:
        return sum(not d.tp for d in self.detections)

    @property
    def n_fn(self) -> int:
        return self.n_gt - self.n_tp


def match_frame(preds: Sequence[KittiLabel], gts: Sequence[KittiLabel], iou_threshold: float,
                ignored: Sequence[KittiLabel] = ()) -> MatchSet:
    """Greedy score-ordered matching on 3D IoU.

    Each prediction, highest score first, takes the unmatched ground truth
    (evaluable or ignored) with the highest IoU at or above the threshold.
    A match to an ignored ground truth removes the prediction from both TP
    and FP counts.
    """
    pool = [(g, False) for g in gts] + [(g, True) for g in ignored if not g.is_dontcare]
    boxes = [g.to_box3d() for g, _ in pool]
    used = [False] * len(pool)
    order = sorted(range(len(preds)), key=lambda i: -_score(preds[i]))
    ms = MatchSet(n_gt=len(gts))
    for i in order:
        p = preds[i]
        pb = p.to_box3d()
        best, best_iou = -1, -1.0
        for j, gb in enumerate(boxes):
            if used[j]:
                continue
            v = iou3d(pb, gb)
            if v >= iou_threshold and v > best_iou:
                best, best_iou = j, v
        if best < 0:
            ms.detections.append(Detection(_score(p), False))
            continue
        used[best] = True
        g, is_ignored = pool[best]
        if is_ignored:
            continue
        err = abs(wrap_angle(p.rotation_y - g.rotation_y))
        ms.detections.append(Detection(_score(p), True, err, best_iou))
    return ms


def _score(lab: KittiLabel) -> float:
    return 1.0 if lab.score is None else lab.score


def _pooled(match_sets: Iterable[MatchSet]) -> tuple[list[Detection], int]:
    dets, n_gt = [], 0
    for ms in match_sets:
        dets.extend(ms.detections)
        n_gt += ms.n_gt
    dets.sort(key=lambda d: -d.score)   # stable: frame order breaks ties
    return dets, n_gt


def _r40_envelope(values: np.ndarray, tp_cum: np.ndarray, n_gt: int) -> float:
    """Mean over r = 1/40..40/40 of max(values[k]) for k with recall_k >= r."""
    if n_gt == 0:
        raise NoGroundTruth("no evaluable ground truth")
    if len(values) == 0:
        return 0.0
    # suffix maximum: best value at or after each rank
    env = np.maximum.accumulate(values[::-1])[::-1]
    # recall_k >= j/40  <=>  40 * tp_k >= j * n_gt  (exact integer test);
    # tp_cum is non-decreasing so the first such k is a binary search
    need = np.arange(1, N_RECALL_POINTS + 1, dtype=np.int64) * n_gt
    first = np.searchsorted(N_RECALL_POINTS * tp_cum, need, side="left")
    reached = first < len(values)
    return 100.0 * float(env[first[reached]].sum()) / N_RECALL_POINTS


def _curves(match_sets: Iterable[MatchSet]):
    dets, n_gt = _pooled(match_sets)
    tp = np.array([d.tp for d in dets], dtype=np.int64)
    sim = np.array([(1.0 + math.cos(d.orientation_error)) / 2 if d.tp else 0.0 for d in dets])
    tp_cum = np.cumsum(tp)
    rank = np.arange(1, len(dets) + 1)
    return tp_cum, rank, np.cumsum(sim), n_gt


def ap_r40(match_sets: Iterable[MatchSet]) -> float:
    tp_cum, rank, _, n_gt = _curves(match_sets)
    return _r40_envelope(tp_cum / rank if len(rank) else tp_cum.astype(float), tp_cum, n_gt)


def aos_r40(match_sets: Iterable[MatchSet]) -> float:
    tp_cum, rank, sim_cum, n_gt = _curves(match_sets)
    return _r40_envelope(sim_cum / rank if len(rank) else sim_cum, tp_cum, n_gt)


def os(aos: float, ap: float) -> float:
    """Orientation score AOS / AP."""
    if ap <= 0:
        raise UndefinedScore("orientation score undefined when AP is 0")
    return aos / ap


@dataclass(frozen=True)
class EvalCell:
    ap: float | None
    aos: float | None
    os: float | None
    mean_iou3d: float | None
    n_gt: int
    n_tp: int


@dataclass
class EvalReport:
    cells: dict[tuple[str, str], EvalCell]
    note: str = "matching on 3D IoU; orientation error on global yaw"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("class,difficulty,ap,aos,os,mean_iou3d\n")
        for (cls, diff), c in self.cells.items():
            vals = [_csv(c.ap), _csv(c.aos), _csv(c.os), _csv(c.mean_iou3d)]
            buf.write(",".join([cls, diff] + vals) + "\n")
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"# {self.note}",
                 f"{'class':<12}{'difficulty':<12}{'AP(%)':>9}{'AOS(%)':>9}{'OS':>8}{'IoU3D':>8}{'n_gt':>6}{'n_tp':>6}"]
        for (cls, diff), c in self.cells.items():
            lines.append(f"{cls:<12}{diff:<12}{_fmt(c.ap, 9, 2)}{_fmt(c.aos, 9, 2)}"
                         f"{_fmt(c.os, 8, 3)}{_fmt(c.mean_iou3d, 8, 3)}{c.n_gt:>6}{c.n_tp:>6}")
        return "\n".join(lines) + "\n"


def _csv(v):
    return "nan" if v is None else repr(float(v))


def _fmt(v, width, prec):
    return f"{'-':>{width}}" if v is None else f"{v:>{width}.{prec}f}"


def evaluate_frames(gt: Mapping[int, Sequence[KittiLabel]], pred: Mapping[int, Sequence[KittiLabel]],
                    iou_thresholds: Mapping[str, float] = DEFAULT_IOU_THRESHOLDS,
                    classes: Sequence[str] = CLASSES, neighbor_classes: bool = False) -> EvalReport:
    missing = sorted(set(pred) - set(gt))
    if missing:
        raise FrameMismatch(f"predictions for frames without ground truth: {missing[:10]}")
    cells = {}
    for cls in classes:
        thr = iou_thresholds[cls]
        neighbors = NEIGHBOR_CLASSES.get(cls, ()) if neighbor_classes else ()
        for level in DIFFICULTIES:
            sets = []
            for fid in sorted(gt):
                labels = gt[fid]
                own = [g for g in labels if g.type == cls]
                keep, ignored = filter_difficulty(own, level)
                ignored += [g for g in labels if g.type in neighbors]
                preds = [p for p in pred.get(fid, ()) if p.type == cls]
                sets.append(match_frame(preds, keep, thr, ignored))
            cells[(cls, level.name)] = _cell(sets)
    return EvalReport(cells)


def _cell(sets: list[MatchSet]) -> EvalCell:
    n_gt = sum(s.n_gt for s in sets)
    ious = [d.iou for s in sets for d in s.detections if d.tp]
    mean_iou = float(np.mean(ious)) if ious else None
    if n_gt == 0:
        return EvalCell(None, None, None, mean_iou, 0, len(ious))
    ap, aos = ap_r40(sets), aos_r40(sets)
    return EvalCell(ap, aos, os(aos, ap) if ap > 0 else None, mean_iou, n_gt, len(ious))


def evaluate(gt_dir, pred_dir, iou_thresholds: Mapping[str, float] = DEFAULT_IOU_THRESHOLDS,
             classes: Sequence[str] = CLASSES, neighbor_classes: bool = False) -> EvalReport:
    gt = read_label_dir(Path(gt_dir))
    pred = read_label_dir(Path(pred_dir)) if Path(pred_dir).exists() else {}
    pred = {f: [p for p in labs if not p.is_dontcare] for f, labs in pred.items()}
    return evaluate_frames(gt, pred, iou_thresholds, classes, neighbor_classes)
