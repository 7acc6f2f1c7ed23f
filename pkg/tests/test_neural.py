import math
from types import SimpleNamespace

import numpy as np
import pytest

from cdm import environment as E
from cdm import estimator as S
from cdm import neural as N
from cdm.errors import NumericalError


def _triples(x, xp, t):
    return SimpleNamespace(x=np.atleast_2d(x), xp=np.atleast_2d(xp), target=np.ravel(t))


def _straight_line_forward(model, x, xp):
    z = list(x) + list(xp)
    total = float(model.output[-1])
    for j in range(model.n_hidden):
        a = float(model.hidden[j, -1])
        for i, zi in enumerate(z):
            a += float(model.hidden[j, i]) * zi
        total += float(model.output[j]) * math.tanh(a)
    return total


class TestForward:
    def test_zero_weights(self):
        m = N.zero_model(4)
        assert N.forward(m, [1.0, 2.0], [-3.0, 0.5]) == 0.0

    def test_output_bias_only(self):
        out = np.zeros(21)
        out[-1] = 0.37
        m = N.MlpModel(4, 20, np.zeros((20, 5)), out)
        assert N.forward(m, [1.0, 2.0], [3.0, 4.0]) == 0.37

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_straight_line_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = N.init_model(4, 7, rng=rng, init_scale=1.5)
        x, xp = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
        assert abs(N.forward(m, x, xp) - _straight_line_forward(m, x, xp)) <= 1e-12

    def test_input_size_check(self):
        with pytest.raises(ValueError):
            N.forward(N.zero_model(4), [1.0], [2.0])


class TestSymmetricOutput:
    def test_exactly_symmetric(self):
        rng = np.random.default_rng(1)
        m = N.init_model(4, 20, rng=rng, init_scale=1.0)
        for _ in range(50):
            x, xp = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
            assert N.symmetric_output(m, x, xp) == N.symmetric_output(m, xp, x)

    def test_average_of_orderings(self):
        # one hidden unit reading only the first input, saturated so tanh = +-1
        hidden = np.array([[50.0, 0.0, 0.0, 0.0, 0.0]])
        m = N.MlpModel(4, 1, hidden, np.array([1.0, 2.0]))
        x, xp = [1.0, 0.0], [-1.0, 0.0]
        assert N.forward(m, x, xp) == 3.0 and N.forward(m, xp, x) == 1.0
        assert N.symmetric_output(m, x, xp) == 2.0

    def test_zero_model(self):
        assert N.symmetric_output(N.zero_model(4), [1, 2], [3, 4]) == 0.0

    def test_batch_agrees_with_scalar(self):
        rng = np.random.default_rng(2)
        m = N.init_model(4, 6, rng=rng, init_scale=1.0)
        x, xp = rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
        b = N.symmetric_batch(m, x, xp)
        for i in range(10):
            assert b[i] == pytest.approx(N.symmetric_output(m, x[i], xp[i]), abs=1e-14)


class TestLossAndGradient:
    def test_zero_everything(self):
        loss, g = N.loss_and_gradient(N.zero_model(4), _triples(np.ones((3, 2)), np.zeros((3, 2)),
                                                                np.zeros(3)))
        assert loss == 0.0 and np.all(g == 0)

    def test_single_triple_bias_gradient(self):
        t = 0.8
        loss, g = N.loss_and_gradient(N.zero_model(4), _triples([0.3, 0.1], [1.0, 2.0], [t]))
        assert loss == pytest.approx(t * t)
        assert g[-1] == pytest.approx(-2 * t)

    def test_full_triple_set_normaliser(self):
        ts = S.build_triple_set(E.robot_arm(), 10, 6, seed=0)
        assert len(ts) == 21
        loss, _ = N.loss_and_gradient(N.zero_model(4), ts)
        assert loss == pytest.approx(2 / (6 * 7) * np.sum(ts.target ** 2))

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_against_central_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = N.init_model(4, 20, rng=rng, init_scale=1.0)
        tr = _triples(rng.uniform(-np.pi, np.pi, (50, 2)), rng.uniform(-np.pi, np.pi, (50, 2)),
                      rng.uniform(0, 2, 50))
        _, g = N.loss_and_gradient(m, tr)
        w, h = m.flat(), 1e-6
        fd = np.empty_like(w)
        for k in range(w.size):
            e = np.zeros_like(w)
            e[k] = h
            fd[k] = (N.symmetric_loss(m.with_flat(w + e), tr)
                     - N.symmetric_loss(m.with_flat(w - e), tr)) / (2 * h)
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)
        assert rel.max() < 1e-5


class TestTrain:
    def test_zero_targets(self):
        rng = np.random.default_rng(0)
        tr = _triples(rng.uniform(-3, 3, (40, 2)), rng.uniform(-3, 3, (40, 2)), np.zeros(40))
        va = _triples(rng.uniform(-3, 3, (40, 2)), rng.uniform(-3, 3, (40, 2)), np.zeros(40))
        out = []
        model = N.train(tr, va, N.TrainConfig(max_iters=500, seed=1), result=out)
        assert out[0].best_val < 1e-6
        assert N.symmetric_loss(model, va) == pytest.approx(out[0].best_val)

    def test_training_loss_never_rises(self):
        env = E.robot_arm()
        tr, va = S.build_triple_set(env, 30, 20, seed=0), S.build_triple_set(env, 30, 20, seed=1)
        out = []
        N.train(tr, va, N.TrainConfig(max_iters=200, seed=0), result=out)
        assert np.all(np.diff(out[0].train_history) <= 0)

    def test_bitwise_reproducible(self):
        env = E.robot_arm()
        tr, va = S.build_triple_set(env, 30, 15, seed=2), S.build_triple_set(env, 30, 15, seed=3)
        cfg = N.TrainConfig(max_iters=100, seed=4)
        a, b = N.train(tr, va, cfg), N.train(tr, va, cfg)
        np.testing.assert_array_equal(a.flat(), b.flat())

    def test_returns_best_validation_weights(self):
        env = E.robot_arm()
        tr, va = S.build_triple_set(env, 30, 15, seed=5), S.build_triple_set(env, 30, 15, seed=6)
        out = []
        model = N.train(tr, va, N.TrainConfig(max_iters=150, seed=0), result=out)
        assert out[0].best_val == min(out[0].val_history)
        assert N.symmetric_loss(model, va) == out[0].best_val

    def test_empty_sets(self):
        empty = _triples(np.empty((0, 2)), np.empty((0, 2)), [])
        full = _triples([[0.0, 0.0]], [[1.0, 1.0]], [1.0])
        with pytest.raises(ValueError):
            N.train(empty, full)
        with pytest.raises(ValueError):
            N.train(full, empty)

    def test_non_finite_loss(self):
        def fun(w):
            return np.nan, np.zeros_like(w)
        with pytest.raises(NumericalError, match="iteration 0"):
            N.minimize_cg(fun, np.zeros(3), lambda w: 0.0, max_iters=5, patience=5)

    def test_validation_every_interval(self):
        # Rosenbrock takes many steps; the validation loss never improves
        calls = []

        def fun(w):
            a, b = w[:-1], w[1:]
            f = float(np.sum(100 * (b - a * a) ** 2 + (1 - a) ** 2))
            g = np.zeros_like(w)
            g[:-1] = -400 * a * (b - a * a) - 2 * (1 - a)
            g[1:] += 200 * (b - a * a)
            return f, g

        def val(w):
            calls.append(1)
            return 1.0

        res = N.minimize_cg(fun, np.zeros(50), val, max_iters=1000, patience=3, val_interval=7)
        assert res.iterations == 21
        assert len(res.val_history) == len(calls) == 4
        np.testing.assert_array_equal(res.weights, np.zeros(50))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            N.TrainConfig(patience=0)
        with pytest.raises(ValueError):
            N.TrainConfig(val_interval=0)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        m = N.init_model(4, 20, rng=np.random.default_rng(9), init_scale=0.7)
        N.save_model(m, tmp_path / "m.txt")
        lines = (tmp_path / "m.txt").read_text().splitlines()
        assert lines[0] == "mlp 4 20" and len(lines) == 1 + m.n_weights
        back = N.load_model(tmp_path / "m.txt")
        np.testing.assert_array_equal(back.flat(), m.flat())

    def test_truncated_file(self, tmp_path):
        m = N.zero_model(4, 3)
        N.save_model(m, tmp_path / "m.txt")
        text = (tmp_path / "m.txt").read_text().splitlines()
        (tmp_path / "m.txt").write_text("\n".join(text[:-1]) + "\n")
        with pytest.raises(ValueError):
            N.load_model(tmp_path / "m.txt")

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.txt").write_text("net 4 20\n")
        with pytest.raises(ValueError):
            N.load_model(tmp_path / "m.txt")

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            N.MlpModel(4, 2, np.zeros((2, 4)), np.zeros(3))
        with pytest.raises(ValueError):
            N.MlpModel(4, 2, np.full((2, 5), np.inf), np.zeros(3))
