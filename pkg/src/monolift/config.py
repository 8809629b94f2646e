"""Run configuration, stored as a single YAML file.

Every constant the method leaves open (bin count, overlap, loss weights,
dimension priors, IoU thresholds) lives here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .geometry import BoxDims
from .lifting import MODES
from .metrics import DEFAULT_IOU_THRESHOLDS
from .multibin import BinLayout, LossWeights, make_layout

# Approximate class-mean (h, w, l) in metres of the KITTI training labels.
DEFAULT_PRIORS = {
    "Car": (1.53, 1.63, 3.88),
    "Pedestrian": (1.76, 0.66, 0.84),
    "Cyclist": (1.74, 0.60, 1.76),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    n_bins: int = 2
    overlap_factor: float = 1.1
    w: float = 0.7
    conf_scale: float = 1.0
    priors: dict[str, tuple[float, float, float]] = field(default_factory=lambda: dict(DEFAULT_PRIORS))
    iou_thresholds: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_IOU_THRESHOLDS))
    mode: str = "pruned"
    drop_truncated_sides: bool = False
    image_size: tuple[int, int] = (1242, 375)
    border_margin: float = 1.0
    neighbor_classes: bool = False
    jobs: int = 1

    def __post_init__(self):
        self.priors = {k: tuple(float(x) for x in v) for k, v in self.priors.items()}
        self.iou_thresholds = {k: float(v) for k, v in self.iou_thresholds.items()}
        self.image_size = tuple(int(v) for v in self.image_size)
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for cls, thr in self.iou_thresholds.items():
            if not 0.0 < thr <= 1.0:
                raise ConfigError(f"IoU threshold for {cls} must be in (0, 1], got {thr}")
            if cls not in self.priors:
                raise ConfigError(f"class {cls!r} has a threshold but no dimension prior")
        for cls, hwl in self.priors.items():
            if len(hwl) != 3 or min(hwl) <= 0:
                raise ConfigError(f"prior for {cls} must be three positive values (h, w, l)")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        self.layout  # raises InvalidLayout
        self.weights

    @property
    def layout(self) -> BinLayout:
        return make_layout(self.n_bins, self.overlap_factor)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w, self.conf_scale)

    def prior_dims(self) -> dict[str, BoxDims]:
        return {cls: BoxDims.from_hwl(*hwl) for cls, hwl in self.priors.items()}

    def to_dict(self) -> dict:
        return {
            "multibin": {"n_bins": self.n_bins, "overlap_factor": self.overlap_factor},
            "loss": {"w": self.w, "conf_scale": self.conf_scale},
            "priors": {k: list(v) for k, v in self.priors.items()},
            "iou_thresholds": dict(self.iou_thresholds),
            "lifting": {"mode": self.mode, "drop_truncated_sides": self.drop_truncated_sides,
                        "image_size": list(self.image_size), "border_margin": self.border_margin},
            "eval": {"neighbor_classes": self.neighbor_classes},
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = d or {}
        known = {"multibin", "loss", "priors", "iou_thresholds", "lifting", "eval", "jobs"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        kw.update(d.get("multibin", {}))
        kw.update(d.get("loss", {}))
        kw.update(d.get("lifting", {}))
        kw.update(d.get("eval", {}))
        for key in ("priors", "iou_thresholds", "jobs"):
            if key in d:
                kw[key] = d[key]
        try:
            return cls(**kw)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return RunConfig.from_dict(yaml.safe_load(Path(path).read_text()))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
