"""Function environments: a parameterised function family, a distribution over
it, the input distribution, and the output discrepancy ``sigma``.

Four environments are provided:

``linear``
    ``f(x) = a . x`` with ``a`` uniform on ``[-alpha, alpha]^n``.
``thresholded_linear``
    ``f(x) = step(a . x)`` with ``a`` uniform in the unit ball, ``step(0) = 1``.
``quadratic``
    ``f(x) = a x^2`` on ``[-1, 1]`` with ``a`` uniform on ``[-1, 1]``.
``robot_arm``
    ``f(t1, t2) = r1^2 + r2^2 + 2 r1 r2 cos(t1 - t2)`` on ``[-pi, pi]^2`` with
    link lengths uniform on ``[0, 1]^2``.

The input distribution is uniform over the domain box in every case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import distortion

ENV_KINDS = ("linear", "thresholded_linear", "quadratic", "robot_arm")

_SIGMA = {
    "linear": "squared_difference",
    "thresholded_linear": "squared_difference",
    "quadratic": "absolute_difference",
    "robot_arm": "squared_difference",
}


@dataclass(frozen=True)
class Environment:
    kind: str
    n: int = 1
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.kind == "quadratic":
            object.__setattr__(self, "n", 1)
        elif self.kind == "robot_arm":
            object.__setattr__(self, "n", 2)
        if self.n < 1:
            raise ValueError("dimension must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def dimension(self) -> int:
        return self.n

    @property
    def sigma(self) -> str:
        return _SIGMA[self.kind]

    @property
    def input_domain(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "robot_arm":
            return np.full(2, -np.pi), np.full(2, np.pi)
        return np.full(self.n, -1.0), np.full(self.n, 1.0)

    @property
    def n_params(self) -> int:
        return {"linear": self.n, "thresholded_linear": self.n, "quadratic": 1,
                "robot_arm": 2}[self.kind]

    def cdm(self) -> distortion.DistortionMeasure:
        """Closed-form canonical distortion of this environment."""
        if self.kind == "linear":
            return distortion.linear_cdm(self.n, distortion.linear_cdm_constant(self.alpha))
        if self.kind == "thresholded_linear":
            return distortion.angle_cdm(self.n)
        if self.kind == "quadratic":
            return distortion.quadratic_cdm(0.5)
        return distortion.robot_arm_cdm()


def linear(n: int, alpha: float = 1.0) -> Environment:
    return Environment("linear", n, alpha)


def thresholded_linear(n: int) -> Environment:
    return Environment("thresholded_linear", n)


def quadratic() -> Environment:
    return Environment("quadratic")


def robot_arm() -> Environment:
    return Environment("robot_arm")


@dataclass(frozen=True)
class FunctionHandle:
    """One function of an environment, identified by its parameter vector."""

    kind: str
    params: tuple[float, ...]

    def __call__(self, x):
        """Values at the rows of ``x``; a 1-D ``x`` is a single point and gives a float."""
        x = np.asarray(x, dtype=float)
        v = _values(self.kind, np.asarray(self.params, dtype=float)[None, :],
                    np.atleast_2d(x))[0]
        return float(v[0]) if x.ndim == 1 else v


class FunctionSample:
    """A batch of ``M`` functions from one environment stored as an ``(M, p)`` array."""

    def __init__(self, env: Environment, params):
        params = np.atleast_2d(np.asarray(params, dtype=float))
        if params.shape[1] != env.n_params:
            raise ValueError(f"{env.kind} functions have {env.n_params} parameters")
        params.setflags(write=False)
        self.env = env
        self.params = params

    @classmethod
    def from_handles(cls, env: Environment, handles) -> "FunctionSample":
        handles = list(handles)
        if any(h.kind != env.kind for h in handles):
            raise ValueError("function handles belong to a different environment")
        return cls(env, np.array([h.params for h in handles], dtype=float).reshape(
            len(handles), env.n_params))

    def __len__(self):
        return len(self.params)

    def __getitem__(self, i) -> FunctionHandle:
        return FunctionHandle(self.env.kind, tuple(float(v) for v in self.params[i]))

    def values(self, xs) -> np.ndarray:
        """Matrix ``V[k, j] = f_k(xs[j])``."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[1] != self.env.dimension:
            raise ValueError(f"expected inputs of dimension {self.env.dimension}")
        return _values(self.env.kind, self.params, xs)


def _values(kind: str, params: np.ndarray, xs: np.ndarray) -> np.ndarray:
    if kind == "linear":
        return params @ xs.T
    if kind == "thresholded_linear":
        return (params @ xs.T >= 0).astype(float)
    if kind == "quadratic":
        return params[:, :1] * (xs[:, 0] ** 2)[None, :]
    r1, r2 = params[:, :1], params[:, 1:2]
    c = np.cos(xs[:, 0] - xs[:, 1])[None, :]
    return r1 * r1 + r2 * r2 + 2.0 * r1 * r2 * c


def _draw_params(env: Environment, rng: np.random.Generator, size: int) -> np.ndarray:
    if env.kind == "linear":
        return rng.uniform(-env.alpha, env.alpha, (size, env.n))
    if env.kind == "quadratic":
        return rng.uniform(-1.0, 1.0, (size, 1))
    if env.kind == "robot_arm":
        return rng.uniform(0.0, 1.0, (size, 2))
    # rejection from the enclosing cube gives an exactly uniform ball sample
    out = np.empty((0, env.n))
    while len(out) < size:
        cand = rng.uniform(-1.0, 1.0, (max(2 * (size - len(out)), 16), env.n))
        out = np.vstack([out, cand[np.sum(cand * cand, axis=1) <= 1.0]])
    return out[:size]


def sample_function(env: Environment, rng: np.random.Generator) -> FunctionHandle:
    return FunctionHandle(env.kind, tuple(float(v) for v in _draw_params(env, rng, 1)[0]))


def sample_functions(env: Environment, rng: np.random.Generator, m: int) -> FunctionSample:
    if m < 1:
        raise ValueError("need at least one function")
    return FunctionSample(env, _draw_params(env, rng, m))


def _check_domain(env: Environment, xs: np.ndarray) -> None:
    lo, hi = env.input_domain
    if xs.shape[-1] != env.dimension:
        raise ValueError(f"{env.kind} inputs have dimension {env.dimension}, "
                         f"got {xs.shape[-1]}")
    if np.any(xs < lo) or np.any(xs > hi):
        raise ValueError(f"input outside the {env.kind} domain [{lo}, {hi}]")


def eval_function(f: FunctionHandle, x, env: Environment | None = None) -> float:
    """Value of ``f`` at the single point ``x``, checked against the domain."""
    env = env if env is not None else _env_for(f)
    if f.kind != env.kind:
        raise ValueError("function handle belongs to a different environment")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_domain(env, x)
    return f(x)


def _env_for(f: FunctionHandle) -> Environment:
    if f.kind in ("linear", "thresholded_linear"):
        return Environment(f.kind, len(f.params))
    return Environment(f.kind)


def sample_input(env: Environment, rng: np.random.Generator) -> np.ndarray:
    return sample_inputs(env, rng, 1)[0]


def sample_inputs(env: Environment, rng: np.random.Generator, n: int) -> np.ndarray:
    lo, hi = env.input_domain
    return rng.uniform(lo, hi, (n, env.dimension))


def eval_sigma(env: Environment | str, y, yp):
    kind = env.sigma if isinstance(env, Environment) else env
    d = np.asarray(y, dtype=float) - np.asarray(yp, dtype=float)
    if kind == "squared_difference":
        out = d * d
    elif kind == "absolute_difference":
        out = np.abs(d)
    else:
        raise ValueError(f"unknown sigma {kind!r}")
    return float(out) if np.ndim(out) == 0 else out


def quadrature(env: Environment, order: int = 4) -> tuple[FunctionSample, np.ndarray]:
    """Gauss-Legendre nodes over the function parameters with probability weights.

    Exact for expectations of ``sigma(f(x), f(x'))`` in the linear, quadratic and
    robot-arm environments, whose integrands are polynomial in the parameters
    (piecewise in ``a`` for the quadratic one, so each half of ``[-1, 1]`` gets
    its own rule).
    """
    t, w = np.polynomial.legendre.leggauss(order)
    t01, w01 = (t + 1) / 2, w / 2
    if env.kind == "quadratic":
        nodes = np.concatenate([-t01[::-1], t01])[:, None]
        weights = np.concatenate([w01[::-1], w01]) / 2
    elif env.kind == "robot_arm":
        r1, r2 = np.meshgrid(t01, t01, indexing="ij")
        nodes = np.column_stack([r1.ravel(), r2.ravel()])
        weights = np.outer(w01, w01).ravel()
    elif env.kind == "linear":
        grids = np.meshgrid(*([t * env.alpha] * env.n), indexing="ij")
        nodes = np.column_stack([g.ravel() for g in grids])
        wg = np.meshgrid(*([w / 2] * env.n), indexing="ij")
        weights = np.prod(np.stack([g.ravel() for g in wg]), axis=0)
    else:
        raise ValueError(f"no exact quadrature for the {env.kind} environment")
    return FunctionSample(env, nodes), weights
