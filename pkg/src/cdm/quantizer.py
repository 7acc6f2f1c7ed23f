"""Vector quantization under an arbitrary distortion measure.

Includes nearest-point assignment with smallest-index tie breaking, input and
environment reconstruction errors, a medoid variant of Lloyd's algorithm, the
fixed-point codebook of the quadratic environment, exhaustive partition search
for small instances, and raster/CSV/PGM output.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import distortion
from . import environment as envmod
from .distortion import DistortionMeasure
from .errors import NumericalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Codebook:
    points: np.ndarray
    measure: DistortionMeasure

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None] if self.measure.dimension == 1 else pts[None, :]
        if pts.ndim != 2 or len(pts) == 0:
            raise ValueError("codebook must hold at least one point")
        if pts.shape[1] != self.measure.dimension:
            raise ValueError(f"codebook points have dimension {pts.shape[1]}, "
                             f"measure expects {self.measure.dimension}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


def _points(xs, dim: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None] if dim == 1 else xs[None, :]
    if xs.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {xs.shape}")
    return xs


def distances(cb: Codebook, xs) -> np.ndarray:
    """``D[j, i] = d(cb.points[i], xs[j])``."""
    xs = _points(xs, cb.measure.dimension)
    return cb.measure.pairwise(cb.points, xs).T


def assign(cb: Codebook, xs) -> np.ndarray:
    """Nearest codebook index for each row of ``xs``; ties go to the smallest index."""
    # argmin returns the first minimum, which is the tie rule we want
    return np.argmin(distances(cb, xs), axis=1)


def nearest_index(cb: Codebook, x) -> int:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (cb.measure.dimension,):
        raise ValueError(f"expected a point of dimension {cb.measure.dimension}")
    return int(assign(cb, x[None, :])[0])


def reconstruction_error_input(cb: Codebook, samples) -> float:
    """Mean of ``d(x, q(x))`` over ``samples``."""
    xs = _points(samples, cb.measure.dimension)
    if len(xs) == 0:
        raise ValueError("need at least one sample")
    return float(np.mean(np.min(distances(cb, xs), axis=1)))


def _medoid(measure: DistortionMeasure, members: np.ndarray, current: np.ndarray,
            chunk: int = 2048) -> tuple[np.ndarray, float, bool]:
    """Return (best point, its summed distortion, changed?) among members and current."""
    cur_cost = float(np.sum(measure(current[None, :], members)))
    best_cost, best = np.inf, None
    for start in range(0, len(members), chunk):
        block = members[start:start + chunk]
        costs = measure.pairwise(block, members).sum(axis=1)
        k = int(np.argmin(costs))
        if costs[k] < best_cost:
            best_cost, best = float(costs[k]), block[k]
    if best is None or best_cost >= cur_cost:
        return current, cur_cost, False
    return best, best_cost, not np.array_equal(best, current)


def lloyd_medoid(measure: DistortionMeasure, samples, m: int, seed: int,
                 max_iters: int = 100, *, init=None,
                 history: list | None = None) -> Codebook:
    """Empirical Lloyd iteration with a medoid update.

    Starts from ``m`` distinct samples chosen uniformly at random (or from the
    sample indices ``init``), then alternates nearest-point assignment and
    replacing each point by the cell member with the least summed distortion to
    the rest of its cell. Stops when the codebook no longer changes or after
    ``max_iters`` rounds. A point whose cell is empty is moved to the sample
    with the largest distortion to its current quantizer.

    If ``history`` is a list, the reconstruction error after every assignment
    step is appended to it.
    """
    xs = _points(samples, measure.dimension)
    n = len(xs)
    if m < 1:
        raise ValueError("m must be positive")
    if m > n:
        raise ValueError(f"cannot pick {m} codebook points from {n} samples")
    if init is None:
        init = np.random.default_rng(seed).choice(n, size=m, replace=False)
    init = np.asarray(init, dtype=int)
    if len(init) != m or len(set(init.tolist())) != m:
        raise ValueError("init must hold m distinct sample indices")
    points = xs[init].copy()
    errors = history if history is not None else []
    prev_err = np.inf
    for it in range(max_iters):
        dist = measure.pairwise(xs, points)
        labels = np.argmin(dist, axis=1)
        per_sample = dist[np.arange(n), labels]
        err = float(per_sample.mean())
        errors.append(err)
        if err > prev_err * (1 + 1e-12) + 1e-15:
            logger.warning("lloyd iteration %d: error rose %.6e -> %.6e", it, prev_err, err)
        prev_err = err

        changed = False
        reseeded = False
        used = np.zeros(n, dtype=bool)
        for i in range(m):
            members = xs[labels == i]
            if len(members) == 0:
                # farthest sample from its quantizer, excluding ones already taken
                order = np.argsort(-per_sample, kind="stable")
                for j in order:
                    if not used[j] and not any(np.array_equal(xs[j], p) for p in points):
                        break
                points[i] = xs[j]
                used[j] = True
                changed = reseeded = True
                continue
            new, _, moved = _medoid(measure, members, points[i])
            if moved:
                points[i] = new
                changed = True
        if reseeded:
            logger.info("lloyd iteration %d: reseeded empty cells", it)
            prev_err = np.inf
        if not changed:
            break
    else:
        dist = measure.pairwise(xs, points)
        errors.append(float(np.min(dist, axis=1).mean()))
    return Codebook(points, measure)


def grid_centers(domain, shape) -> list[np.ndarray]:
    """Cell-centre coordinates of a regular grid, one array per axis."""
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in domain)
    shape = np.atleast_1d(shape)
    if np.any(shape < 1):
        raise ValueError("grid dimensions must be positive")
    return [lo[k] + (hi[k] - lo[k]) * (2 * np.arange(s) + 1) / (2 * s)
            for k, s in enumerate(shape)]


def grid_points(domain, per_axis) -> np.ndarray:
    """All cell centres of a grid with ``per_axis`` cells on every axis of ``domain``."""
    lo = np.atleast_1d(domain[0])
    axes = grid_centers(domain, [per_axis] * len(lo))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


@dataclass(frozen=True)
class PartitionLabels:
    """Voronoi labels on a 2-D raster.

    ``labels[r, c]`` belongs to the cell centre with horizontal coordinate
    ``xs[c]`` and vertical coordinate ``ys[r]``; row 0 is the top (largest y).
    """

    labels: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    points: np.ndarray
    domain: tuple

    @property
    def n_labels(self) -> int:
        return len(self.points)


def voronoi_raster(cb: Codebook, grid=(250, 250), domain=None) -> PartitionLabels:
    width, height = grid
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be positive")
    if cb.measure.dimension != 2:
        raise ValueError("rasters need two-dimensional inputs")
    if domain is None:
        domain = (np.full(2, -np.pi), np.full(2, np.pi))
    lo, hi = (np.asarray(b, dtype=float) for b in domain)
    xs, ys = grid_centers((lo, hi), (width, height))
    ys = ys[::-1]
    gx, gy = np.meshgrid(xs, ys)
    labels = assign(cb, np.column_stack([gx.ravel(), gy.ravel()])).reshape(height, width)
    return PartitionLabels(labels, xs, ys, cb.points.copy(), (lo, hi))


def label_agreement(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of cells with matching labels after the best one-to-one relabelling."""
    from scipy.optimize import linear_sum_assignment

    a, b = np.ravel(a), np.ravel(b)
    ka, kb = int(a.max()) + 1, int(b.max()) + 1
    conf = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(conf, (a, b), 1)
    rows, cols = linear_sum_assignment(conf, maximize=True)
    return float(conf[rows, cols].sum() / a.size)


def _check_faithful(cb: Codebook, xs: np.ndarray, labels: np.ndarray) -> None:
    if len(labels) != len(xs):
        raise ValueError("one label per sample is required")
    if np.any(labels < 0) or np.any(labels >= len(cb)):
        raise ValueError("labels must index codebook points")
    for i, p in enumerate(cb.points):
        hit = np.all(xs == p, axis=1)
        if np.any(labels[hit] != i):
            raise ValueError(f"partition is not faithful: codebook point {i} "
                             "is assigned to another cell")


def _function_sample(env, functions, weights, f_samples, seed):
    if functions is None:
        functions = envmod.sample_functions(env, np.random.default_rng(seed), f_samples)
    k = len(functions)
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    return functions, w


def env_errors_per_function(env: envmod.Environment, cb: Codebook, labels, x_samples, *,
                            f_samples: int = 100, seed: int = 0, functions=None,
                            ) -> np.ndarray:
    """Per-function piecewise-constant approximation error over ``x_samples``."""
    xs = _points(x_samples, env.dimension)
    labels = np.asarray(labels, dtype=int)
    _check_faithful(cb, xs, labels)
    functions, _ = _function_sample(env, functions, None, f_samples, seed)
    fx = functions.values(xs)
    fq = functions.values(cb.points)[:, labels]
    return np.mean(envmod.eval_sigma(env, fx, fq), axis=1)


def reconstruction_error_env(env: envmod.Environment, cb: Codebook, labels, x_samples, *,
                             f_samples: int = 100, seed: int = 0, functions=None,
                             weights=None) -> float:
    """Expected deviation between ``f`` and its piecewise-constant approximation.

    ``labels[j]`` is the cell of ``x_samples[j]``; ``f`` is averaged over
    ``f_samples`` functions drawn with ``seed``, or over ``functions`` with
    optional probability ``weights`` (e.g. from :func:`environment.quadrature`).
    """
    xs = _points(x_samples, env.dimension)
    labels = np.asarray(labels, dtype=int)
    _check_faithful(cb, xs, labels)
    functions, w = _function_sample(env, functions, weights, f_samples, seed)
    per_f = env_errors_per_function(env, cb, labels, xs, functions=functions)
    return float(w @ per_f)


def _cost_matrix(env, cb, xs, functions, w) -> np.ndarray:
    # C[j, i] = E_f sigma(f(x_j), f(cb_i))
    fx = functions.values(xs)
    fq = functions.values(cb.points)
    s = envmod.eval_sigma(env, fx[:, :, None], fq[:, None, :])
    return np.tensordot(w, s, axes=1)


def brute_force_optimal_partition(env: envmod.Environment, cb: Codebook, finite_x, *,
                                  f_samples: int = 100, seed: int = 0, functions=None,
                                  weights=None) -> tuple[np.ndarray, float]:
    """Exhaustively search faithful partitions of a small finite input set.

    Returns the labels minimising the approximation error (averaged over the
    same function sample as :func:`reconstruction_error_env`) and that error.
    The first minimiser in lexicographic label order wins ties.
    """
    xs = _points(finite_x, env.dimension)
    k = len(cb)
    if len(xs) > 12 or k > 3:
        raise ValueError("brute force is limited to 12 inputs and 3 codebook points")
    functions, w = _function_sample(env, functions, weights, f_samples, seed)
    cost = _cost_matrix(env, cb, xs, functions, w)
    fixed = np.full(len(xs), -1)
    for i, p in enumerate(cb.points):
        hit = np.all(xs == p, axis=1)
        fixed[hit & (fixed == -1)] = i
    free = np.flatnonzero(fixed < 0)
    best_err, best = np.inf, None
    base = cost[np.arange(len(xs)), np.maximum(fixed, 0)] * (fixed >= 0)
    for combo in itertools.product(range(k), repeat=len(free)):
        idx = np.asarray(combo, dtype=int)
        err = (base.sum() + cost[free, idx].sum()) / len(xs)
        if err < best_err:
            best_err = err
            best = fixed.copy()
            best[free] = idx
    return best, float(best_err)


def _interior(a: float, b: float) -> float:
    a2, b2 = a * a, b * b
    return np.sqrt((a2 + b2) / 4 + np.sqrt(a2 * a2 + 6 * a2 * b2 + b2 * b2) / (4 * np.sqrt(2)))


def quadratic_fixed_point_map(q: np.ndarray) -> np.ndarray:
    """Right-hand sides of the stationarity relations for sorted positive points."""
    k = len(q)
    if k == 1:
        return np.array([0.5])
    out = np.empty(k)
    out[0] = q[1] / np.sqrt(7)
    for i in range(1, k - 1):
        out[i] = _interior(q[i - 1], q[i + 1])
    out[-1] = (4 + np.sqrt(2 + 7 * q[-2] ** 2)) / 7
    return out


def solve_quadratic_codebook(k: int, *, damping: float = 0.5, tol: float = 1e-10,
                             max_iter: int = 100_000) -> Codebook:
    """Optimal positive codebook of size ``k`` for ``|x - y| |x + y|`` on ``[-1, 1]``.

    Iterates ``q <- (1 - damping) q + damping F(q)`` from equally spaced points,
    where ``F`` applies the interior relation
    ``q_i^2 = (q_{i-1}^2 + q_{i+1}^2) / 4 + sqrt(q_{i-1}^4 + 6 q_{i-1}^2 q_{i+1}^2 + q_{i+1}^4) / (4 sqrt 2)``
    and the end relations ``q_1 = q_2 / sqrt 7``,
    ``q_k = (4 + sqrt(2 + 7 q_{k-1}^2)) / 7``.
    """
    if k < 1:
        raise ValueError("k must be positive")
    q = np.linspace(0.0, 1.0, k + 2)[1:-1]
    for _ in range(max_iter):
        new = (1 - damping) * q + damping * quadratic_fixed_point_map(q)
        if np.max(np.abs(new - q)) < tol:
            q = new
            break
        q = new
    else:
        raise NumericalError(f"quadratic codebook did not converge in {max_iter} iterations")
    return Codebook(q[:, None], distortion.quadratic_cdm())


def quadratic_reconstruction_error(points, scale: float = 1.0) -> float:
    """Exact ``E |x^2 - q(x)^2|`` for ``x`` uniform on ``[-1, 1]``, times ``scale``.

    ``points`` may include negative values; only their absolute values matter.
    """
    q = np.unique(np.abs(np.ravel(np.asarray(points, dtype=float))))
    q2 = q * q
    bounds = np.concatenate([[0.0], np.sqrt((q2[:-1] + q2[1:]) / 2), [1.0]])

    def prim(x, c):  # antiderivative of x^2 - c on a monotone piece
        return x ** 3 / 3 - c * x

    total = 0.0
    for qi, a, b in zip(q, bounds[:-1], bounds[1:]):
        c = qi * qi
        m = min(max(qi, a), b)
        total += (prim(m, c) - prim(a, c)) * -1 + (prim(b, c) - prim(m, c))
    return float(scale * total)


def write_codebook_csv(cb: Codebook, path) -> None:
    d = cb.points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(d)])
        for p in cb.points:
            w.writerow([repr(float(v)) for v in p])


def read_codebook_csv(path, measure: DistortionMeasure) -> Codebook:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return Codebook(np.array(rows[1:], dtype=float).reshape(len(rows) - 1, -1), measure)


def write_pgm(raster: PartitionLabels, path) -> None:
    """Binary PGM (P5), one byte per pixel, labels scaled onto 0..255."""
    k = raster.n_labels
    scale = 255.0 / (k - 1) if k > 1 else 0.0
    pix = np.rint(raster.labels * scale).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    pix = np.frombuffer(parts[4][: w * h], dtype=np.uint8)
    return pix.reshape(h, w)


def write_points_csv(raster: PartitionLabels, path) -> None:
    """Codebook overlay: fractional pixel (column, row) of each quantization point."""
    lo, hi = raster.domain
    w, h = len(raster.xs), len(raster.ys)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["index", "col", "row"])
        for i, p in enumerate(raster.points):
            col = (p[0] - lo[0]) / (hi[0] - lo[0]) * w - 0.5
            row = (hi[1] - p[1]) / (hi[1] - lo[1]) * h - 0.5
            out.writerow([i, repr(float(col)), repr(float(row))])
