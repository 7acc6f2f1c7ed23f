import numpy as np
import pytest

from cdm import approx as A
from cdm import distortion as D
from cdm import environment as E
from cdm import quantizer as Q


def robot_cb(points):
    return Q.Codebook(np.asarray(points, dtype=float), D.robot_arm_cdm())


class TestFitPiecewise:
    def test_full_extension_values(self):
        pts = E.sample_inputs(E.robot_arm(), np.random.default_rng(0), 6)
        pa = A.fit_piecewise(E.FunctionHandle("robot_arm", (1.0, 1.0)), E.robot_arm(),
                             robot_cb(pts))
        np.testing.assert_allclose(pa.values, 2 + 2 * np.cos(pts[:, 0] - pts[:, 1]),
                                   rtol=1e-15, atol=1e-15)

    def test_constant_function(self):
        cb = Q.Codebook([[0.1], [0.5], [-0.9]], D.quadratic_cdm())
        pa = A.fit_piecewise(E.FunctionHandle("quadratic", (0.0,)), E.quadratic(), cb)
        assert np.all(pa.values == 0)

    def test_single_point(self):
        pa = A.fit_piecewise(E.FunctionHandle("robot_arm", (0.5, 0.5)), E.robot_arm(),
                             robot_cb([[0.0, 0.0]]))
        assert pa.values.shape == (1,) and pa.values[0] == 1.0

    def test_point_outside_domain(self):
        with pytest.raises(ValueError):
            A.fit_piecewise(E.FunctionHandle("robot_arm", (1.0, 1.0)), E.robot_arm(),
                            robot_cb([[4.0, 0.0]]))


class TestPredict:
    def test_faithful_at_codebook_points(self):
        env = E.robot_arm()
        rng = np.random.default_rng(1)
        cb = robot_cb(E.sample_inputs(env, rng, 8))
        pa = A.fit_piecewise(E.sample_function(env, rng), env, cb)
        for i, q in enumerate(cb.points):
            assert A.predict(pa, q) == pa.values[i]

    def test_single_point_is_constant(self):
        env = E.robot_arm()
        pa = A.fit_piecewise(E.FunctionHandle("robot_arm", (0.3, 0.9)), env, robot_cb([[1, 2]]))
        xs = E.sample_inputs(env, np.random.default_rng(2), 100)
        assert np.all(A.predict_batch(pa, xs) == pa.values[0])

    def test_fig1_step_function(self):
        cb = Q.solve_quadratic_codebook(6)
        pa = A.fit_piecewise(E.FunctionHandle("quadratic", (1.0,)), E.quadratic(), cb)
        q2 = cb.points.ravel() ** 2
        bounds = np.sqrt((q2[:-1] + q2[1:]) / 2)
        x = np.linspace(-1, 1, 2001)
        cell = np.searchsorted(bounds, np.abs(x))
        np.testing.assert_array_equal(A.predict_batch(pa, x[:, None]), q2[cell])


class TestGeneralizationError:
    def test_constant_function(self):
        env = E.robot_arm()
        cb = robot_cb(E.sample_inputs(env, np.random.default_rng(3), 5))
        pa = A.fit_piecewise(E.FunctionHandle("robot_arm", (0.0, 0.0)), env, cb)
        assert A.generalization_error(pa, E.FunctionHandle("robot_arm", (0.0, 0.0)), env, 40) == 0

    def test_codebook_is_the_grid(self):
        env = E.robot_arm()
        grid = Q.grid_points(env.input_domain, 12)
        f = E.FunctionHandle("robot_arm", (0.7, 0.4))
        pa = A.fit_piecewise(f, env, robot_cb(grid))
        assert A.generalization_error(pa, f, env, 12) == 0.0

    def test_grid_too_small(self):
        env = E.robot_arm()
        f = E.FunctionHandle("robot_arm", (0.7, 0.4))
        with pytest.raises(ValueError):
            A.generalization_error(A.fit_piecewise(f, env, robot_cb([[0, 0]])), f, env, 1)

    def test_batch_matches_single(self):
        env = E.robot_arm()
        rng = np.random.default_rng(4)
        cb = robot_cb(E.sample_inputs(env, rng, 6))
        fs = E.sample_functions(env, rng, 5)
        batch = A.generalization_errors(cb, env, fs, 30)
        for k in range(5):
            single = A.generalization_error(A.fit_piecewise(fs[k], env, cb), fs[k], env, 30)
            assert batch[k] == pytest.approx(single, rel=1e-12)

    def test_lemma1_on_grid(self):
        env = E.robot_arm()
        rng = np.random.default_rng(5)
        cb = robot_cb(E.sample_inputs(env, rng, 12))
        fs = E.sample_functions(env, rng, 2000)
        per_f = A.generalization_errors(cb, env, fs, 60)
        se = per_f.std(ddof=1) / np.sqrt(len(per_f))
        grid = Q.grid_points(env.input_domain, 60)
        assert abs(per_f.mean() - Q.reconstruction_error_input(cb, grid)) <= 3 * se

    def test_prediction_constant_on_raster_cells(self):
        env = E.robot_arm()
        rng = np.random.default_rng(6)
        cb = robot_cb(E.sample_inputs(env, rng, 7))
        pa = A.fit_piecewise(E.sample_function(env, rng), env, cb)
        r = Q.voronoi_raster(cb, (40, 40))
        gx, gy = np.meshgrid(r.xs, r.ys)
        pred = A.predict_batch(pa, np.column_stack([gx.ravel(), gy.ravel()])).reshape(40, 40)
        for i in range(len(cb)):
            cell = pred[r.labels == i]
            assert np.all(cell == pa.values[i])

    @pytest.mark.slow
    def test_true_cdm_pipeline_matches_table(self):
        from cdm import estimator as S
        env = E.robot_arm()
        inputs = S.build_triple_set(env, 200, 200, seed=0).inputs
        cb = Q.lloyd_medoid(D.robot_arm_cdm(), inputs, 20, seed=0)
        errs = A.generalization_errors(cb, env, E.sample_functions(env,
                                                                   np.random.default_rng(1), 100))
        assert 1.8e-3 / 3 <= errs.mean() <= 1.8e-3 * 3


class TestDirectBaseline:
    def test_zero_function(self):
        _, err = A.train_direct_baseline(E.FunctionHandle("robot_arm", (0.0, 0.0)), E.robot_arm(),
                                         20, seed=0, grid_per_axis=50)
        assert err < 1e-6

    def test_split(self):
        assert A._split(1) == 1
        assert A._split(2) == 1
        assert A._split(20) == 16

    def test_bad_budget(self):
        with pytest.raises(ValueError):
            A.train_direct_baseline(E.FunctionHandle("robot_arm", (1.0, 1.0)), E.robot_arm(), 0, 0)

    @pytest.mark.slow
    def test_more_samples_help(self):
        env = E.robot_arm()
        f = E.FunctionHandle("robot_arm", (0.8, 0.6))
        inversions = 0
        for seed in range(10):
            errs = [A.train_direct_baseline(f, env, n, seed, grid_per_axis=60)[1]
                    for n in (20, 60, 200)]
            inversions += int(errs[1] > errs[0]) + int(errs[2] > errs[1])
        assert inversions <= 1


def test_results_csv(tmp_path):
    A.write_results_csv([("cdm", 20, 0, 1.5e-3), ("direct", 20, 0, 0.25)], tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines == ["method,m_or_ntrain,seed,gen_error", "cdm,20,0,0.0015", "direct,20,0,0.25"]
