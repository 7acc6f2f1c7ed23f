"""Monte-Carlo estimation of the canonical distortion and training-triple sets."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import environment as envmod
from .distortion import DistortionMeasure


def _as_sample(functions, env) -> envmod.FunctionSample:
    if isinstance(functions, envmod.FunctionSample):
        return functions
    functions = list(functions)
    if not functions:
        raise ValueError("need at least one function")
    return envmod.FunctionSample.from_handles(env, functions)


def estimate_cdm_pair(functions, env: envmod.Environment, x, xp, *,
                      return_se: bool = False):
    """Empirical CDM ``(1/M) sum_k sigma(f_k(x), f_k(x'))``.

    With ``return_se=True`` returns ``(estimate, standard_error)`` where the
    standard error is the sample standard deviation over ``sqrt(M)``.
    """
    sample = _as_sample(functions, env)
    if len(sample) == 0:
        raise ValueError("need at least one function")
    v = sample.values(np.vstack([np.ravel(x), np.ravel(xp)]))
    s = envmod.eval_sigma(env, v[:, 0], v[:, 1])
    est = float(np.mean(s))
    if not return_se:
        return est
    se = float(np.std(s, ddof=1) / np.sqrt(len(s))) if len(s) > 1 else 0.0
    return est, se


def pairwise_estimate(functions, env: envmod.Environment, xs, ys=None) -> np.ndarray:
    """Matrix of empirical CDM values between every ``xs[i]`` and ``ys[j]``."""
    sample = _as_sample(functions, env)
    vx = sample.values(xs)
    vy = vx if ys is None else sample.values(ys)
    out = np.empty((vx.shape[1], vy.shape[1]))
    # fixed reduction order per pair: mean over functions for one row at a time
    for i in range(vx.shape[1]):
        out[i] = np.mean(envmod.eval_sigma(env, vx[:, i:i + 1], vy), axis=0)
    return out


@dataclass(frozen=True)
class TripleSet:
    """Training triples ``(x_i, x_j, rho_hat(x_i, x_j))`` for ``i <= j``.

    ``inputs`` holds the ``N`` sampled points; row ``t`` of ``x``/``xp`` is the
    pair ``(inputs[i], inputs[j])`` in row-major ``i <= j`` order.
    """

    x: np.ndarray
    xp: np.ndarray
    target: np.ndarray
    inputs: np.ndarray
    m_functions: int
    n_inputs: int
    env_kind: str
    seed: int | None

    def __len__(self):
        return len(self.target)


def triples_from_inputs(functions, env: envmod.Environment, inputs, *,
                        seed: int | None = None) -> TripleSet:
    sample = _as_sample(functions, env)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    rho = pairwise_estimate(sample, env, inputs)
    i, j = np.triu_indices(len(inputs))
    return TripleSet(inputs[i], inputs[j], rho[i, j], inputs, len(sample), len(inputs),
                     env.kind, seed)


def build_triple_set(env: envmod.Environment, m: int, n: int, seed: int) -> TripleSet:
    """Sample ``m`` functions then ``n`` inputs and emit all ``n(n+1)/2`` triples."""
    if m < 1 or n < 1:
        raise ValueError("M and N must be positive")
    rng = np.random.default_rng(seed)
    functions = envmod.sample_functions(env, rng, m)
    inputs = envmod.sample_inputs(env, rng, n)
    return triples_from_inputs(functions, env, inputs, seed=seed)


def measure_distance(a: DistortionMeasure, b: DistortionMeasure, env: envmod.Environment,
                     n_samples: int, seed: int) -> float:
    """Monte-Carlo estimate of ``E[(a(x, x') - b(x, x'))^2]`` over independent pairs."""
    if a.dimension != b.dimension or a.dimension != env.dimension:
        raise ValueError("measures and environment disagree on the input dimension")
    rng = np.random.default_rng(seed)
    x = envmod.sample_inputs(env, rng, n_samples)
    xp = envmod.sample_inputs(env, rng, n_samples)
    d = a(x, xp) - b(x, xp)
    return float(np.mean(d * d))


def write_triples_csv(triples: TripleSet, path) -> None:
    d = triples.x.shape[1]
    header = [f"x{k + 1}" for k in range(d)] + [f"xp{k + 1}" for k in range(d)] + ["target"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, xp, t in zip(triples.x, triples.xp, triples.target):
            w.writerow([repr(float(v)) for v in (*x, *xp, t)])


def read_triples_csv(path) -> TripleSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    d = (len(header) - 1) // 2
    if header[-1] != "target" or len(header) != 2 * d + 1:
        raise ValueError(f"{path}: unexpected header {header}")
    x, xp, t = body[:, :d], body[:, d:2 * d], body[:, -1]
    inputs = np.unique(np.vstack([x, xp]), axis=0)
    return TripleSet(x, xp, t, inputs, 0, len(inputs), Path(path).stem, None)
