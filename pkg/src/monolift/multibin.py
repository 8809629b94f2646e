"""Discrete-continuous (MultiBin) orientation encoding.

The local angle is covered by ``n`` overlapping bins.  For each bin a model
emits three numbers: an unnormalized confidence and an unnormalized
``(cos, sin)`` pair for the residual from the bin center.  Flat vectors use
that per-bin interleaving: ``[c0, cos0, sin0, c1, cos1, sin1, ...]``.

These are forward-only reference functions a trainer can check itself
against; no gradients are computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import wrap_angle

DEGENERATE_EPS = 1e-12


class InvalidLayout(ValueError):
    pass


class DegenerateResidual(ValueError):
    pass


@dataclass(frozen=True)
class BinLayout:
    """Bin ``i`` is centred at ``-pi + 2*pi*i/n`` and covers +-``half_width``."""

    n: int
    half_width: float

    @property
    def centers(self) -> np.ndarray:
        return -math.pi + 2.0 * math.pi * np.arange(self.n) / self.n

    @property
    def overlap_factor(self) -> float:
        return self.half_width * self.n / math.pi

    def covers(self, theta: float) -> np.ndarray:
        return np.abs(wrap_angle(theta - self.centers)) <= self.half_width


def make_layout(n: int = 2, overlap_factor: float = 1.1) -> BinLayout:
    if n < 2:
        raise InvalidLayout(f"need at least 2 bins, got {n}")
    if not overlap_factor > 1.0:
        raise InvalidLayout(f"overlap_factor must exceed 1 so bins overlap, got {overlap_factor}")
    half_width = overlap_factor * math.pi / n
    if half_width >= math.pi:
        raise InvalidLayout(f"half width {half_width:.4f} rad reaches pi; a bin would cover every angle")
    return BinLayout(n, half_width)


@dataclass(frozen=True)
class MultiBinOutput:
    """Raw head output: confidences (n,) and residual pairs (n, 2) as (cos, sin)."""

    confidences: np.ndarray
    residuals: np.ndarray

    def __post_init__(self):
        conf = np.asarray(self.confidences, dtype=float).reshape(-1)
        res = np.asarray(self.residuals, dtype=float).reshape(-1, 2)
        if len(conf) != len(res):
            raise ValueError(f"{len(conf)} confidences but {len(res)} residual pairs")
        object.__setattr__(self, "confidences", conf)
        object.__setattr__(self, "residuals", res)

    @property
    def n(self) -> int:
        return len(self.confidences)

    @classmethod
    def from_flat(cls, values: Sequence[float]) -> "MultiBinOutput":
        v = np.asarray(values, dtype=float)
        if v.ndim != 1 or len(v) % 3:
            raise ValueError(f"expected 3n scalars, got {v.size}")
        v = v.reshape(-1, 3)
        return cls(v[:, 0], v[:, 1:])

    def to_flat(self) -> np.ndarray:
        return np.column_stack([self.confidences, self.residuals]).reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, MultiBinOutput):
            return NotImplemented
        return (np.array_equal(self.confidences, other.confidences)
                and np.array_equal(self.residuals, other.residuals))

    __hash__ = None


@dataclass(frozen=True)
class MultiBinTarget:
    covered: np.ndarray      # bool (n,)
    residuals: np.ndarray    # rad (n,), meaningful where covered
    theta_star: float

    @property
    def n_covered(self) -> int:
        return int(self.covered.sum())

    def distribution(self) -> np.ndarray:
        """Uniform probability mass over the covered bins."""
        return self.covered / self.covered.sum()


@dataclass(frozen=True)
class LossWeights:
    """``total = conf_scale * L_conf + w * L_loc``.

    ``conf_scale`` stays at 1 for the plain weighted sum; it is exposed
    for trainers that also scale the confidence branch.
    """

    w: float = 0.7
    conf_scale: float = 1.0

    def __post_init__(self):
        if self.w < 0 or self.conf_scale <= 0:
            raise ValueError(f"invalid loss weights {self}")


def normalize_residual(pair) -> np.ndarray:
    """L2-normalize a ``(cos, sin)`` pair, or an array of pairs (..., 2)."""
    p = np.asarray(pair, dtype=float)
    if np.any(np.all(np.abs(p) <= DEGENERATE_EPS, axis=-1)):
        raise DegenerateResidual("residual pair is (0, 0); direction undefined")
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def encode(theta_local: float, layout: BinLayout) -> MultiBinTarget:
    delta = wrap_angle(theta_local - layout.centers)
    covered = np.abs(delta) <= layout.half_width
    return MultiBinTarget(covered, np.where(covered, delta, 0.0), wrap_angle(theta_local))


def target_output(target: MultiBinTarget) -> MultiBinOutput:
    """A head output that reproduces ``target`` exactly.

    Confidences are the target distribution; uncovered bins get a zero
    residual ``(1, 0)``.
    """
    return MultiBinOutput(target.distribution(),
                          np.column_stack([np.cos(target.residuals), np.sin(target.residuals)]))


def decode(output: MultiBinOutput, layout: BinLayout) -> float:
    _check_n(output, layout)
    i = int(np.argmax(output.confidences))  # first maximum wins ties
    c, s = normalize_residual(output.residuals[i])
    return wrap_angle(layout.centers[i] + math.atan2(s, c))


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    m = scores.max()
    return scores - (m + math.log(np.exp(scores - m).sum()))


def loss_conf(confidences, target: MultiBinTarget) -> float:
    """Cross-entropy of softmax(confidences) against the covered-bin distribution."""
    scores = np.asarray(confidences, dtype=float).reshape(-1)
    if len(scores) != len(target.covered):
        raise ValueError(f"{len(scores)} scores for {len(target.covered)} bins")
    return max(0.0, float(-(target.distribution() * _log_softmax(scores)).sum()))


def loss_loc(output: MultiBinOutput, target: MultiBinTarget, layout: BinLayout) -> float:
    _check_n(output, layout)
    cov = target.covered
    r = normalize_residual(output.residuals[cov])
    err = target.theta_star - layout.centers[cov] - np.arctan2(r[:, 1], r[:, 0])
    return float(-np.cos(err).sum() / cov.sum())


def loss_total(output: MultiBinOutput, target: MultiBinTarget, layout: BinLayout,
               weights: LossWeights = LossWeights()) -> float:
    return (weights.conf_scale * loss_conf(output.confidences, target)
            + weights.w * loss_loc(output, target, layout))


def _check_n(output: MultiBinOutput, layout: BinLayout):
    if output.n != layout.n:
        raise ValueError(f"output has {output.n} bins, layout has {layout.n}")
