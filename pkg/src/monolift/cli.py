"""Command-line entry point: ``monolift {lift,eval,synth,encode,decode,render}``.

Exit codes: 0 success, 1 input error, 2 internal invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import kitti_io, multibin
from .config import RunConfig, load_config
from .geometry import Box3D, CameraIntrinsics, wrap_angle
from .kitti_io import KittiLabel, PredictionRecord
from .lifting import NoValidSolution, RankDeficient, border_sides, lift_local
from .metrics import evaluate
from .render import render_svg
from .synth import IMAGE_SIZE, perturb, random_scene

logger = logging.getLogger("monolift")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2
DEFAULT_NOISE_GRID = (0.0, 1.0, 2.0, 4.0, 8.0)


class InvariantViolation(RuntimeError):
    pass


# -- lift -----------------------------------------------------------------------

def _lift_record(k: CameraIntrinsics, rec: PredictionRecord, cfg: RunConfig):
    det = rec.det
    if rec.theta_local is not None:
        theta_local = rec.theta_local
    else:
        theta_local = multibin.decode(rec.multibin, cfg.layout)
    dims_source = rec.dims if rec.dims is not None else cfg.prior_dims()
    drop = border_sides(det, cfg.image_size, cfg.border_margin) if cfg.drop_truncated_sides else ()
    res = lift_local(k, det, theta_local, dims_source, mode=cfg.mode, drop_sides=drop)
    if not (res.pose.t[2] > 0 and res.residual >= 0):
        raise InvariantViolation(f"frame {rec.frame:06d}: lift returned an invalid pose {res.pose}")
    box = Box3D(res.pose.t, res.dims, res.pose.yaw)
    return KittiLabel.from_box3d(box, det.class_label, det.as_array(),
                                 alpha=wrap_angle(theta_local), score=det.score)


def _lift_frame(frame: int, calib_path: Path, records: list[PredictionRecord], cfg: RunConfig):
    k = kitti_io.parse_calib_file(calib_path.read_text()).intrinsics()
    labels, warnings = [], []
    for rec in records:
        try:
            labels.append(_lift_record(k, rec, cfg))
        except (NoValidSolution, RankDeficient) as e:
            warnings.append(f"frame {frame:06d} {rec.det.class_label}: skipped ({e})")
    return frame, kitti_io.emit_label_file(labels), warnings


def cmd_lift(calib_dir, predictions_file, out_dir, cfg: RunConfig) -> int:
    with open(predictions_file) as fh:
        n, records = kitti_io.read_predictions(fh)
    if n != cfg.n_bins:
        raise kitti_io.BinCountMismatch(f"prediction header n={n} but config n_bins={cfg.n_bins}")
    frames: dict[int, list[PredictionRecord]] = {}
    for rec in records:
        frames.setdefault(rec.frame, []).append(rec)
    calib_dir, out_dir = Path(calib_dir), Path(out_dir)
    missing = [f for f in sorted(frames) if not (calib_dir / f"{f:06d}.txt").is_file()]
    if missing:
        raise FileNotFoundError(f"missing calibration for frame(s): {', '.join(f'{f:06d}' for f in missing)}")
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(f, calib_dir / f"{f:06d}.txt", frames[f], cfg) for f in sorted(frames)]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_lift_frame, *zip(*jobs)))
    else:
        results = [_lift_frame(*j) for j in jobs]
    for frame, text, warnings in results:
        for w in warnings:
            logger.warning(w)
        (out_dir / f"{frame:06d}.txt").write_text(text)
    logger.info("lifted %d detections in %d frames", len(records), len(frames))
    return EXIT_OK


# -- eval -----------------------------------------------------------------------

def cmd_eval(gt_dir, pred_dir, cfg: RunConfig, csv_path=None, out=None) -> int:
    out = out or sys.stdout
    if not Path(gt_dir).is_dir():
        raise FileNotFoundError(f"ground-truth directory {gt_dir} not found")
    report = evaluate(gt_dir, pred_dir, cfg.iou_thresholds, classes=tuple(cfg.iou_thresholds),
                      neighbor_classes=cfg.neighbor_classes)
    out.write(report.to_text())
    if csv_path:
        Path(csv_path).write_text(report.to_csv())
    return EXIT_OK


# -- synth ----------------------------------------------------------------------

def _num(x: float) -> str:
    return f"{x:.10g}"


def run_synth(seed: int, n_scenes: int, noise_grid, cfg: RunConfig):
    """Generate scenes, perturb their detections, lift, and collect errors.

    Returns (per-scene rows, summary rows).  The same scenes and the same
    unit noise draws are reused for every amplitude.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    rng = np.random.default_rng(seed)
    scenes = [random_scene(rng, IMAGE_SIZE) for _ in range(n_scenes)]
    unit = rng.uniform(-1.0, 1.0, size=(n_scenes, 4))
    layout = cfg.layout
    per_scene, summary = [], []
    for amp in noise_grid:
        t_err, yaw_err, failed = [], [], 0
        for i, sc in enumerate(scenes):
            # the head sees the local angle of the unperturbed crop
            out = multibin.target_output(multibin.encode(sc.theta_local, layout))
            det = perturb(sc.det, unit[i], amp)
            try:
                res = lift_local(sc.k, det, multibin.decode(out, layout), sc.dims, mode=cfg.mode)
            except (NoValidSolution, RankDeficient):
                failed += 1
                per_scene.append([_num(amp), str(i), sc.class_label, "nan", "nan", "nan", "failed"])
                continue
            te = float(np.linalg.norm(np.subtract(res.pose.t, sc.pose.t)))
            ye = abs(wrap_angle(res.pose.yaw - sc.pose.yaw))
            t_err.append(te)
            yaw_err.append(ye)
            per_scene.append([_num(amp), str(i), sc.class_label, _num(te), _num(ye),
                              _num(res.rect_error), "ok"])
        t = np.array(t_err) if t_err else np.array([math.nan])
        y = np.array(yaw_err) if yaw_err else np.array([math.nan])
        summary.append([_num(amp), str(n_scenes), str(failed), _num(np.median(t)), _num(t.mean()),
                        _num(t.max()), _num(np.median(y)), _num(y.max())])
    return scenes, per_scene, summary


SUMMARY_HEADER = ["noise_px", "n_scenes", "n_failed", "median_t_err_m", "mean_t_err_m",
                  "max_t_err_m", "median_yaw_err_rad", "max_yaw_err_rad"]
PER_SCENE_HEADER = ["noise_px", "scene", "class", "t_err_m", "yaw_err_rad", "rect_error_px", "status"]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_synth_dataset(out_dir: Path, scenes, seed: int, noise: float, cfg: RunConfig):
    """KITTI-style calib/ and label/ ground truth plus a predictions file.

    One scene per frame.  Predictions carry the exact MultiBin encoding of
    the true local angle, the (optionally perturbed) detection and the true
    dimensions.
    """
    out_dir = Path(out_dir)
    (out_dir / "calib").mkdir(parents=True, exist_ok=True)
    (out_dir / "label").mkdir(parents=True, exist_ok=True)
    unit = np.random.default_rng(seed + 1).uniform(-1.0, 1.0, size=(len(scenes), 4))
    records = []
    for i, sc in enumerate(scenes):
        (out_dir / "calib" / f"{i:06d}.txt").write_text(
            kitti_io.emit_calib_file(kitti_io.KittiCalib.from_intrinsics(sc.k)))
        box = Box3D(sc.pose.t, sc.dims, sc.pose.yaw)
        lab = KittiLabel.from_box3d(box, sc.class_label, sc.det.as_array(), alpha=sc.theta_local)
        (out_dir / "label" / f"{i:06d}.txt").write_text(kitti_io.emit_label_file([lab]))
        out = multibin.target_output(multibin.encode(sc.theta_local, cfg.layout))
        records.append(PredictionRecord(i, perturb(sc.det, unit[i], noise), multibin=out, dims=sc.dims))
    with open(out_dir / "predictions.txt", "w") as fh:
        kitti_io.write_predictions(records, fh, cfg.n_bins)


def cmd_synth(seed: int, n_scenes: int, noise_grid, cfg: RunConfig, per_scene_path=None,
              dataset_out=None, out=None) -> int:
    out = out or sys.stdout
    scenes, per_scene, summary = run_synth(seed, n_scenes, noise_grid, cfg)
    out.write(_csv_text(SUMMARY_HEADER, summary))
    if per_scene_path:
        Path(per_scene_path).write_text(_csv_text(PER_SCENE_HEADER, per_scene))
    if dataset_out:
        write_synth_dataset(Path(dataset_out), scenes, seed, noise_grid[0], cfg)
    return EXIT_OK


# -- encode / decode ------------------------------------------------------------

def _read_rows(source) -> list[list[float]]:
    text = Path(source).read_text() if source not in (None, "-") else sys.stdin.read()
    rows = []
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError as e:
            raise kitti_io.MalformedLine(line_no, str(e)) from None
    return rows


def cmd_encode(angles, cfg: RunConfig, out=None) -> int:
    """One row of 3n scalars (c, cos, sin per bin) per input angle."""
    out = out or sys.stdout
    for theta in angles:
        row = multibin.target_output(multibin.encode(theta, cfg.layout)).to_flat()
        out.write(" ".join(repr(float(v)) for v in row) + "\n")
    return EXIT_OK


def cmd_decode(rows, cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    for i, row in enumerate(rows, 1):
        if len(row) != 3 * cfg.n_bins:
            raise kitti_io.BinCountMismatch(f"row {i}: {len(row)} values, need {3 * cfg.n_bins}")
        out.write(repr(multibin.decode(multibin.MultiBinOutput.from_flat(row), cfg.layout)) + "\n")
    return EXIT_OK


# -- render ---------------------------------------------------------------------

def cmd_render(calib_path, labels_path, image_size, out=None) -> int:
    out = out or sys.stdout
    k = kitti_io.parse_calib_file(Path(calib_path).read_text()).intrinsics()
    labels = kitti_io.parse_label_file(Path(labels_path).read_text())
    out.write(render_svg(k, labels, image_size))
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def _noise_grid(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("noise amplitudes must be non-negative")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="monolift", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("lift", parents=[common], help="lift 2D detections to KITTI 3D labels")
    s.add_argument("calib_dir")
    s.add_argument("predictions")
    s.add_argument("out_dir")
    s.add_argument("--mode", choices=["exhaustive", "pruned"])
    s.add_argument("--jobs", type=int)
    s.add_argument("--drop-truncated-sides", action="store_true", default=None)

    s = sub.add_parser("eval", parents=[common], help="AP/AOS/OS/IoU3D against KITTI labels")
    s.add_argument("gt_dir")
    s.add_argument("pred_dir")
    s.add_argument("--csv", help="also write the report as CSV here")

    s = sub.add_parser("synth", parents=[common], help="synthetic round-trip recovery harness")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-scenes", type=int, default=1000)
    s.add_argument("--noise-px", type=_noise_grid, default=DEFAULT_NOISE_GRID,
                   help="comma-separated side-noise amplitudes in px (default 0,1,2,4,8)")
    s.add_argument("--mode", choices=["exhaustive", "pruned"])
    s.add_argument("--per-scene", help="write per-scene errors to this CSV")
    s.add_argument("--dataset-out", help="also write calib/, label/ and predictions.txt here")

    s = sub.add_parser("encode", parents=[common], help="angles -> MultiBin target rows")
    s.add_argument("angles", nargs="*", type=float, help="local angles in rad (default: read stdin)")

    s = sub.add_parser("decode", parents=[common], help="MultiBin rows -> angles")
    s.add_argument("rows", nargs="?", default="-", help="file of 3n-value rows (default stdin)")

    s = sub.add_parser("render", parents=[common], help="SVG wireframe overlay")
    s.add_argument("calib")
    s.add_argument("labels")
    s.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"), default=IMAGE_SIZE)
    s.add_argument("-o", "--output", help="SVG path (default stdout)")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    if getattr(args, "drop_truncated_sides", None):
        cfg.drop_truncated_sides = True
    cfg.validate()
    return cfg


def _dispatch(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if args.command == "lift":
        return cmd_lift(args.calib_dir, args.predictions, args.out_dir, cfg)
    if args.command == "eval":
        return cmd_eval(args.gt_dir, args.pred_dir, cfg, csv_path=args.csv)
    if args.command == "synth":
        return cmd_synth(args.seed, args.n_scenes, args.noise_px, cfg,
                         per_scene_path=args.per_scene, dataset_out=args.dataset_out)
    if args.command == "encode":
        angles = args.angles or [v for row in _read_rows("-") for v in row]
        return cmd_encode(angles, cfg)
    if args.command == "decode":
        return cmd_decode(_read_rows(args.rows), cfg)
    if args.command == "render":
        if args.output:
            with open(args.output, "w") as fh:
                return cmd_render(args.calib, args.labels, tuple(args.image_size), out=fh)
        return cmd_render(args.calib, args.labels, tuple(args.image_size))
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return _dispatch(args)
    except (InvariantViolation, AssertionError) as e:
        logger.error("internal invariant failure: %s", e)
        return EXIT_INTERNAL
    except (ValueError, KeyError, OSError) as e:
        logger.error("%s", e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
