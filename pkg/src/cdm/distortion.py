"""Distortion measures: classical ones and closed-form canonical distortions.

Every measure evaluates with numpy broadcasting: ``measure(x, y)`` accepts
arrays whose last axis is the input dimension and returns an array of the
broadcast leading shape. :func:`eval_distortion` is the validated scalar
entry point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import neural

KINDS = ("squared_euclidean", "hamming", "linear_cdm", "angle_cdm", "quadratic_cdm",
         "robot_arm_cdm", "learned")


def linear_cdm_constant(alpha: float) -> float:
    """Scale of the linear-environment CDM for weights uniform on ``[-alpha, alpha]^n``.

    ``E[a_i^2] = alpha^2 / 3`` and the cross terms vanish.
    """
    return alpha * alpha / 3.0


ROBOT_ARM_CONSTANT = 4.0 / 9.0


@dataclass(frozen=True)
class DistortionMeasure:
    kind: str
    dimension: int
    scale: float = 1.0
    model: Optional[neural.MlpModel] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.kind == "quadratic_cdm" and self.dimension != 1:
            raise ValueError("quadratic_cdm is defined on the real line")
        if self.kind == "robot_arm_cdm" and self.dimension != 2:
            raise ValueError("robot_arm_cdm takes two link angles")
        if self.kind == "learned":
            if self.model is None:
                raise ValueError("learned measure needs a model")
            if self.model.n_inputs != 2 * self.dimension:
                raise ValueError(f"model takes {self.model.n_inputs} inputs, "
                                 f"expected {2 * self.dimension}")

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        if x.shape[-1:] != (self.dimension,):
            raise ValueError(f"expected points of dimension {self.dimension}, "
                             f"got shape {x.shape}")
        return _EVAL[self.kind](self, x, y)

    def pairwise(self, xs, ys, *, chunk: int = 1 << 18) -> np.ndarray:
        """Matrix ``D[i, j] = d(xs[i], ys[j])``, evaluated in row chunks."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        out = np.empty((len(xs), len(ys)))
        rows = max(1, chunk // max(1, len(ys)))
        for start in range(0, len(xs), rows):
            block = xs[start:start + rows]
            out[start:start + rows] = self(block[:, None, :], ys[None, :, :])
        return out


def _sq(m, x, y):
    return np.sum((x - y) ** 2, axis=-1)


def _hamming(m, x, y):
    # symbols compare by exact equality
    return np.where(np.all(x == y, axis=-1), 0.0, 1.0)


def _linear(m, x, y):
    return m.scale * np.sum((x - y) ** 2, axis=-1)


def _angle(m, x, y):
    nx = np.linalg.norm(x, axis=-1)
    ny = np.linalg.norm(y, axis=-1)
    if np.any(nx == 0) or np.any(ny == 0):
        raise ValueError("angle_cdm is undefined for the zero vector")
    # half-angle form: exact zero for identical directions, no arccos clamping needed
    ux, uy = x / nx[..., None], y / ny[..., None]
    theta = 2.0 * np.arctan2(np.linalg.norm(ux - uy, axis=-1), np.linalg.norm(ux + uy, axis=-1))
    return theta / np.pi


def _quadratic(m, x, y):
    x, y = x[..., 0], y[..., 0]
    return m.scale * np.abs(x - y) * np.abs(x + y)


def _robot_arm(m, x, y):
    c = np.cos(x[..., 0] - x[..., 1]) - np.cos(y[..., 0] - y[..., 1])
    return m.scale * ROBOT_ARM_CONSTANT * c * c


def _learned(m, x, y):
    shape = x.shape[:-1]
    flat_x = x.reshape(-1, m.dimension)
    flat_y = y.reshape(-1, m.dimension)
    out = neural.symmetric_batch(m.model, flat_x, flat_y)
    return np.maximum(out, 0.0).reshape(shape)


_EVAL = {
    "squared_euclidean": _sq,
    "hamming": _hamming,
    "linear_cdm": _linear,
    "angle_cdm": _angle,
    "quadratic_cdm": _quadratic,
    "robot_arm_cdm": _robot_arm,
    "learned": _learned,
}


def squared_euclidean(dimension: int) -> DistortionMeasure:
    return DistortionMeasure("squared_euclidean", dimension)


def hamming(dimension: int) -> DistortionMeasure:
    return DistortionMeasure("hamming", dimension)


def linear_cdm(dimension: int, scale: float) -> DistortionMeasure:
    return DistortionMeasure("linear_cdm", dimension, scale=scale)


def angle_cdm(dimension: int) -> DistortionMeasure:
    return DistortionMeasure("angle_cdm", dimension)


def quadratic_cdm(scale: float = 1.0) -> DistortionMeasure:
    """``scale * |x - y| * |x + y|`` on the real line.

    ``scale=1`` is the unnormalised form; the CDM of the quadratic environment
    with ``a`` uniform on ``[-1, 1]`` is ``scale=0.5`` (``E|a| = 1/2``).
    """
    return DistortionMeasure("quadratic_cdm", 1, scale=scale)


def robot_arm_cdm() -> DistortionMeasure:
    """``4/9 * (cos(t1 - t2) - cos(t1' - t2'))**2``."""
    return DistortionMeasure("robot_arm_cdm", 2)


def learned(model: neural.MlpModel) -> DistortionMeasure:
    """Symmetrised network output, clamped below at zero."""
    if model.n_inputs % 2:
        raise ValueError("a pairwise model needs an even number of inputs")
    return DistortionMeasure("learned", model.n_inputs // 2, model=model)


def eval_distortion(measure: DistortionMeasure, x, xp) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    if x.shape != (measure.dimension,) or xp.shape != (measure.dimension,):
        raise ValueError(f"{measure.kind} expects points of dimension "
                         f"{measure.dimension}, got {x.shape} and {xp.shape}")
    return float(measure(x, xp))


@dataclass(frozen=True)
class IntervalUnion:
    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        for lo, hi in ivs:
            if lo > hi:
                raise ValueError(f"interval ({lo}, {hi}) has lo > hi")
        for (_, hi), (lo, _) in zip(ivs, ivs[1:]):
            if lo <= hi:
                raise ValueError("intervals must be sorted and disjoint")
        object.__setattr__(self, "intervals", ivs)

    def __contains__(self, v) -> bool:
        return any(lo <= v <= hi for lo, hi in self.intervals)

    def __len__(self):
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)


def epsilon_ball_quadratic(x: float, eps: float) -> IntervalUnion:
    """Exact set ``{x' in [-1, 1] : |x - x'| |x + x'| <= eps}``.

    The set is ``sqrt(x^2 - eps) <= |x'| <= sqrt(x^2 + eps)``, clipped to the
    input domain. Requires ``0 < x <= 1`` and ``0 <= eps < x^2`` so the two
    pieces around ``x`` and ``-x`` stay separate.
    """
    if not 0 < x <= 1:
        raise ValueError("x must lie in (0, 1]")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if eps >= x * x:
        raise ValueError(f"eps={eps} >= x^2={x * x}: the balls around x and -x merge")
    inner = np.sqrt(x * x - eps)
    outer = min(np.sqrt(x * x + eps), 1.0)
    return IntervalUnion(((-outer, -inner), (inner, outer)))
