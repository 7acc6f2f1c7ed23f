"""One-hidden-layer tanh network for learning a distortion measure from pairs.

The network maps the concatenation ``[x; x']`` to a scalar. Its symmetrised
output ``(net(x, x') + net(x', x)) / 2`` is trained against empirical CDM
targets with Polak-Ribiere conjugate gradient and early stopping on a
held-out triple set.

Weights are kept as two arrays:

* ``hidden`` with shape ``(n_hidden, n_inputs + 1)``, last column is the bias;
* ``output`` with shape ``(n_hidden + 1,)``, last entry is the bias.

The flat parameter vector used by the optimizer (and by the text file format)
is ``hidden`` in row-major order followed by ``output``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import NumericalError

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = 20


@dataclass(frozen=True)
class MlpModel:
    n_inputs: int
    n_hidden: int
    hidden: np.ndarray
    output: np.ndarray

    def __post_init__(self):
        hidden = np.array(self.hidden, dtype=float)
        output = np.array(self.output, dtype=float)
        if hidden.shape != (self.n_hidden, self.n_inputs + 1):
            raise ValueError(f"hidden weights have shape {hidden.shape}, "
                             f"expected {(self.n_hidden, self.n_inputs + 1)}")
        if output.shape != (self.n_hidden + 1,):
            raise ValueError(f"output weights have shape {output.shape}, "
                             f"expected {(self.n_hidden + 1,)}")
        if not (np.all(np.isfinite(hidden)) and np.all(np.isfinite(output))):
            raise ValueError("model weights must be finite")
        hidden.setflags(write=False)
        output.setflags(write=False)
        object.__setattr__(self, "hidden", hidden)
        object.__setattr__(self, "output", output)

    @property
    def n_weights(self) -> int:
        return self.hidden.size + self.output.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.hidden.ravel(), self.output])

    @classmethod
    def from_flat(cls, n_inputs: int, n_hidden: int, w) -> "MlpModel":
        w = np.asarray(w, dtype=float)
        n_h = n_hidden * (n_inputs + 1)
        if w.shape != (n_h + n_hidden + 1,):
            raise ValueError(f"expected {n_h + n_hidden + 1} weights, got {w.size}")
        return cls(n_inputs, n_hidden, w[:n_h].reshape(n_hidden, n_inputs + 1), w[n_h:])

    def with_flat(self, w) -> "MlpModel":
        return MlpModel.from_flat(self.n_inputs, self.n_hidden, w)


def zero_model(n_inputs: int, n_hidden: int = DEFAULT_HIDDEN) -> MlpModel:
    return MlpModel(n_inputs, n_hidden, np.zeros((n_hidden, n_inputs + 1)),
                    np.zeros(n_hidden + 1))


def init_model(n_inputs: int, n_hidden: int = DEFAULT_HIDDEN, *, rng: np.random.Generator,
               init_scale: float = 0.1) -> MlpModel:
    """Uniform initialisation in ``[-init_scale, init_scale]``."""
    n = n_hidden * (n_inputs + 1) + n_hidden + 1
    return MlpModel.from_flat(n_inputs, n_hidden, rng.uniform(-init_scale, init_scale, n))


def predict(model: MlpModel, z) -> np.ndarray:
    """Raw network output for a batch of inputs ``z`` of shape ``(B, n_inputs)``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[-1] != model.n_inputs:
        raise ValueError(f"network takes {model.n_inputs} inputs, got {z.shape[-1]}")
    h = np.tanh(z @ model.hidden[:, :-1].T + model.hidden[:, -1])
    return h @ model.output[:-1] + model.output[-1]


def forward(model: MlpModel, x, xp) -> float:
    """Raw, unsymmetrised output ``net([x; x'])`` for a single pair."""
    z = np.concatenate([np.ravel(x), np.ravel(xp)]).astype(float)
    if z.size != model.n_inputs:
        raise ValueError(f"dim(x) + dim(x') = {z.size}, network takes {model.n_inputs}")
    return float(predict(model, z[None, :])[0])


def symmetric_batch(model: MlpModel, x, xp) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xp = np.atleast_2d(np.asarray(xp, dtype=float))
    a = predict(model, np.concatenate([x, xp], axis=1))
    b = predict(model, np.concatenate([xp, x], axis=1))
    return (a + b) / 2


def symmetric_output(model: MlpModel, x, xp) -> float:
    """Order-invariant output ``(net(x, x') + net(x', x)) / 2``."""
    return (forward(model, x, xp) + forward(model, xp, x)) / 2


def _backprop(model: MlpModel, z: np.ndarray, dout: np.ndarray):
    """Gradient of ``sum(dout * predict(model, z))`` w.r.t. (hidden, output)."""
    h = np.tanh(z @ model.hidden[:, :-1].T + model.hidden[:, -1])
    g_out = np.empty(model.n_hidden + 1)
    g_out[:-1] = dout @ h
    g_out[-1] = dout.sum()
    dpre = np.outer(dout, model.output[:-1]) * (1.0 - h * h)
    g_hid = np.empty_like(model.hidden)
    g_hid[:, :-1] = dpre.T @ z
    g_hid[:, -1] = dpre.sum(axis=0)
    return g_hid, g_out


def _pair_arrays(triples):
    return (np.asarray(triples.x, dtype=float), np.asarray(triples.xp, dtype=float),
            np.asarray(triples.target, dtype=float))


def symmetric_loss(model: MlpModel, triples) -> float:
    x, xp, t = _pair_arrays(triples)
    r = symmetric_batch(model, x, xp) - t
    return float(np.mean(r * r))


def loss_and_gradient(model: MlpModel, triples) -> tuple[float, np.ndarray]:
    """Symmetrised mean squared error over the triples and its exact gradient.

    ``triples`` is anything with ``x``, ``xp`` and ``target`` arrays (a
    :class:`cdm.estimator.TripleSet`). The loss is

        E = 1/T * sum_t [ (net(x_t, x'_t) + net(x'_t, x_t)) / 2 - target_t ]^2

    with ``T = N(N+1)/2`` for a full triple set. The gradient is returned as a
    flat vector in :meth:`MlpModel.flat` order.
    """
    x, xp, t = _pair_arrays(triples)
    if len(t) == 0:
        raise ValueError("empty triple set")
    z_fwd = np.concatenate([x, xp], axis=1)
    z_rev = np.concatenate([xp, x], axis=1)
    r = (predict(model, z_fwd) + predict(model, z_rev)) / 2 - t
    loss = float(np.mean(r * r))
    # dE/d(net output) for each ordering: 2 r / T * 1/2
    d = r / len(t)
    gh1, go1 = _backprop(model, z_fwd, d)
    gh2, go2 = _backprop(model, z_rev, d)
    return loss, np.concatenate([(gh1 + gh2).ravel(), go1 + go2])


def regression_loss_and_gradient(model: MlpModel, z, y) -> tuple[float, np.ndarray]:
    """Plain mean squared error of ``predict(model, z)`` against ``y``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.asarray(y, dtype=float)
    r = predict(model, z) - y
    gh, go = _backprop(model, z, 2.0 * r / len(y))
    return float(np.mean(r * r)), np.concatenate([gh.ravel(), go])


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings.

    The validation error is checked every ``val_interval`` CG steps and training
    stops once ``patience`` consecutive checks fail to improve on the best one.
    """

    max_iters: int = 6000
    patience: int = 5
    seed: int = 0
    init_scale: float = 0.1
    n_hidden: int = DEFAULT_HIDDEN
    val_interval: int = 100

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.val_interval < 1:
            raise ValueError("val_interval must be >= 1")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")


@dataclass
class TrainResult:
    weights: np.ndarray
    best_val: float
    iterations: int
    train_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)


_ARMIJO_C = 1e-4


def _armijo(fun, w, f0, g0, p, step):
    slope = float(g0 @ p)
    for _ in range(60):
        w_new = w + step * p
        f_new, g_new = fun(w_new)
        if np.isfinite(f_new) and f_new <= f0 + _ARMIJO_C * step * slope:
            return step, w_new, f_new, g_new
        step *= 0.5
    return 0.0, w, f0, g0


def _trial_step(fun, w, g, p, fallback):
    """Newton step along ``p`` from a finite-difference curvature estimate."""
    eps = 1e-6 / max(float(np.linalg.norm(p)), 1e-300)
    _, g_eps = fun(w + eps * p)
    curv = float(p @ (g_eps - g)) / eps
    if not np.isfinite(curv) or curv <= 0:
        return fallback
    return min(-float(g @ p) / curv, 1e6)


def minimize_cg(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], w0: np.ndarray,
                val_fun: Callable[[np.ndarray], float], *, max_iters: int,
                patience: int, val_interval: int = 1) -> TrainResult:
    """Polak-Ribiere CG with Armijo backtracking and validation early stopping.

    Each step tries the curvature-estimated Newton step along the search
    direction and halves it until the Armijo condition holds. ``val_fun`` is
    evaluated every ``val_interval`` steps; the weights with the lowest
    validation error seen are returned.
    """
    w = np.array(w0, dtype=float)
    f, g = fun(w)
    if not np.isfinite(f):
        raise NumericalError("non-finite loss at iteration 0")
    p = -g
    best_w, best_val = w.copy(), val_fun(w)
    result = TrainResult(best_w, best_val, 0, [f], [best_val])
    stale = 0
    step = 1.0 / max(float(np.linalg.norm(g)), 1e-12)
    n = w.size
    since_restart = 0
    for it in range(1, max_iters + 1):
        gp = float(g @ p)
        if gp >= 0:
            p, gp, since_restart = -g, -float(g @ g), 0
        if gp == 0.0:
            break
        step = _trial_step(fun, w, g, p, 2.0 * step)
        accepted, w_new, f_new, g_new = _armijo(fun, w, f, g, p, step)
        if accepted == 0.0:
            if since_restart == 0:
                break
            p, since_restart = -g, 0
            continue
        if not np.isfinite(f_new):
            raise NumericalError(f"non-finite loss at iteration {it}")
        step = accepted
        beta = max(0.0, float(g_new @ (g_new - g)) / float(g @ g))
        since_restart += 1
        if since_restart >= n:
            p, since_restart = -g_new, 0
        else:
            p = -g_new + beta * p
        w, f, g = w_new, f_new, g_new
        result.train_history.append(f)
        result.iterations = it
        if it % val_interval and it != max_iters:
            continue

        val = val_fun(w)
        if not np.isfinite(val):
            raise NumericalError(f"non-finite validation loss at iteration {it}")
        result.val_history.append(val)
        if val < best_val:
            best_val, best_w, stale = val, w.copy(), 0
        else:
            stale += 1
            if stale >= patience:
                break
    result.weights, result.best_val = best_w, best_val
    logger.debug("cg stopped after %d iterations, best validation %.3e",
                 result.iterations, best_val)
    return result


def train(triples, val_triples, cfg: TrainConfig = TrainConfig(), *,
          init: MlpModel | None = None, result: list | None = None) -> MlpModel:
    """Fit the symmetrised network to ``triples``, early-stopping on ``val_triples``.

    If ``result`` is a list, the :class:`TrainResult` is appended to it.
    """
    x = np.asarray(triples.x)
    if len(x) == 0 or len(np.asarray(val_triples.x)) == 0:
        raise ValueError("training and validation triple sets must be non-empty")
    n_inputs = 2 * x.shape[1]
    if init is None:
        init = init_model(n_inputs, cfg.n_hidden, rng=np.random.default_rng(cfg.seed),
                          init_scale=cfg.init_scale)
    shape = (init.n_inputs, init.n_hidden)

    def fun(w):
        return loss_and_gradient(MlpModel.from_flat(*shape, w), triples)

    def val_fun(w):
        return symmetric_loss(MlpModel.from_flat(*shape, w), val_triples)

    res = minimize_cg(_guard(fun), init.flat(), val_fun, max_iters=cfg.max_iters,
                      patience=cfg.patience, val_interval=cfg.val_interval)
    if result is not None:
        result.append(res)
    return MlpModel.from_flat(*shape, res.weights)


def fit_regression(z, y, z_val, y_val, cfg: TrainConfig) -> MlpModel:
    """Train a plain ``n_inputs -> n_hidden -> 1`` regressor with the same optimizer."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    z_val = np.atleast_2d(np.asarray(z_val, dtype=float))
    init = init_model(z.shape[1], cfg.n_hidden, rng=np.random.default_rng(cfg.seed),
                      init_scale=cfg.init_scale)
    shape = (init.n_inputs, init.n_hidden)

    def fun(w):
        return regression_loss_and_gradient(MlpModel.from_flat(*shape, w), z, y)

    def val_fun(w):
        r = predict(MlpModel.from_flat(*shape, w), z_val) - y_val
        return float(np.mean(r * r))

    res = minimize_cg(_guard(fun), init.flat(), val_fun, max_iters=cfg.max_iters,
                      patience=cfg.patience, val_interval=cfg.val_interval)
    return MlpModel.from_flat(*shape, res.weights)


def _guard(fun):
    # MlpModel rejects non-finite weights; report that as an infinite loss so the
    # line search backs off instead of crashing.
    def wrapped(w):
        if not np.all(np.isfinite(w)):
            return np.inf, np.zeros_like(w)
        with np.errstate(over="ignore", invalid="ignore"):
            f, g = fun(w)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(w)
        return f, g
    return wrapped


def save_model(model: MlpModel, path) -> None:
    lines = [f"mlp {model.n_inputs} {model.n_hidden}"]
    lines += [repr(float(v)) for v in model.flat()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> MlpModel:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty model file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "mlp":
        raise ValueError(f"{path}: bad header {lines[0]!r}")
    n_inputs, n_hidden = int(head[1]), int(head[2])
    expected = n_hidden * (n_inputs + 1) + n_hidden + 1
    if len(lines) - 1 != expected:
        raise ValueError(f"{path}: expected {expected} weights, found {len(lines) - 1}")
    return MlpModel.from_flat(n_inputs, n_hidden, [float(v) for v in lines[1:]])
