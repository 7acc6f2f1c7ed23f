"""Piecewise-constant function approximation over a codebook, and the direct
neural-network baseline it is compared against."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import environment as envmod
from . import neural
from .quantizer import Codebook, _check_faithful, assign, grid_points

DIRECT_HIDDEN = 10
DEFAULT_GRID = 250


@dataclass(frozen=True)
class PiecewiseApprox:
    codebook: Codebook
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if len(values) != len(self.codebook):
            raise ValueError("need one stored value per codebook point")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def _in_domain(env: envmod.Environment, xs: np.ndarray) -> bool:
    lo, hi = env.input_domain
    return bool(np.all(xs >= lo) and np.all(xs <= hi))


def fit_piecewise(f: envmod.FunctionHandle, env: envmod.Environment,
                  cb: Codebook) -> PiecewiseApprox:
    """Store ``f(q_i)`` for every codebook point."""
    if f.kind != env.kind:
        raise ValueError("function handle belongs to a different environment")
    if cb.measure.dimension != env.dimension or not _in_domain(env, cb.points):
        raise ValueError("codebook points must lie in the environment's input domain")
    return PiecewiseApprox(cb, f(cb.points))


def predict(pa: PiecewiseApprox, x) -> float:
    """1-nearest-neighbour prediction ``f(q(x))``."""
    return float(pa.values[
        int(assign(pa.codebook, np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0])])


def predict_batch(pa: PiecewiseApprox, xs) -> np.ndarray:
    return pa.values[assign(pa.codebook, xs)]


def generalization_error(pa: PiecewiseApprox, f: envmod.FunctionHandle,
                         env: envmod.Environment, grid_per_axis: int = DEFAULT_GRID) -> float:
    """Mean ``sigma(f(x), f(q(x)))`` over the cell centres of a regular grid."""
    if grid_per_axis < 2:
        raise ValueError("grid_per_axis must be at least 2")
    xs = grid_points(env.input_domain, grid_per_axis)
    return float(np.mean(envmod.eval_sigma(env, f(xs), predict_batch(pa, xs))))


def generalization_errors(cb: Codebook, env: envmod.Environment,
                          functions: envmod.FunctionSample,
                          grid_per_axis: int = DEFAULT_GRID, labels=None) -> np.ndarray:
    """Per-function grid generalization error of the piecewise approximation.

    The grid partition is computed once and shared by all functions; pass
    ``labels`` to reuse a partition computed elsewhere.
    """
    xs = grid_points(env.input_domain, grid_per_axis)
    if labels is None:
        labels = assign(cb, xs)
    else:
        labels = np.asarray(labels, dtype=int)
        _check_faithful(cb, xs, labels)
    fx = functions.values(xs)
    fq = functions.values(cb.points)[:, labels]
    return np.mean(envmod.eval_sigma(env, fx, fq), axis=1)


def _split(n: int) -> int:
    # 80/20 holdout; a single sample doubles as its own validation point
    if n < 2:
        return n
    return min(n - 1, max(1, int(round(0.8 * n))))


def train_direct_baseline(f: envmod.FunctionHandle, env: envmod.Environment, n_train: int,
                          seed: int, *, grid_per_axis: int = DEFAULT_GRID,
                          n_hidden: int = DIRECT_HIDDEN,
                          max_iters: int = 2000) -> tuple[neural.MlpModel, float]:
    """Learn ``f`` from ``n_train`` samples with a small tanh network.

    Returns the model and its grid generalization error.
    """
    if n_train < 1:
        raise ValueError("n_train must be positive")
    rng = np.random.default_rng(seed)
    xs = envmod.sample_inputs(env, rng, n_train)
    ys = f(xs)
    k = _split(n_train)
    tr, va = (slice(0, k), slice(k, None)) if k < n_train else (slice(None), slice(None))
    cfg = neural.TrainConfig(max_iters=max_iters, seed=int(rng.integers(2**31)),
                             n_hidden=n_hidden)
    model = neural.fit_regression(xs[tr], ys[tr], xs[va], ys[va], cfg)
    grid = grid_points(env.input_domain, grid_per_axis)
    err = envmod.eval_sigma(env, f(grid), neural.predict(model, grid))
    return model, float(np.mean(err))


RESULT_FIELDS = ("method", "m_or_ntrain", "seed", "gen_error")


def write_results_csv(rows, path) -> None:
    """Write ``(method, m_or_ntrain, seed, gen_error)`` rows with a header."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(RESULT_FIELDS)
        for method, budget, seed, err in rows:
            out.writerow([method, int(budget), int(seed), repr(float(err))])
