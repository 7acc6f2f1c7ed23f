import numpy as np
import pytest

from cdm import distortion as D
from cdm import environment as E
from cdm import estimator as S


def test_single_linear_function():
    env = E.linear(1, 1.0)
    f = E.FunctionHandle("linear", (1.0,))
    assert S.estimate_cdm_pair([f], env, [1.0], [3.0]) == 4.0


def test_identical_handles_average_to_single_value():
    env = E.robot_arm()
    f = E.FunctionHandle("robot_arm", (0.4, 0.9))
    x, xp = [0.1, 0.2], [1.0, -2.0]
    one = S.estimate_cdm_pair([f], env, x, xp)
    assert S.estimate_cdm_pair([f] * 25, env, x, xp) == pytest.approx(one, rel=1e-14)


def test_empty_function_list():
    with pytest.raises(ValueError):
        S.estimate_cdm_pair([], E.robot_arm(), [0, 0], [1, 1])


def test_robot_arm_monte_carlo_against_closed_form():
    env = E.robot_arm()
    funcs = E.sample_functions(env, np.random.default_rng(123), 100_000)
    est, se = S.estimate_cdm_pair(funcs, env, [0.0, 0.0], [np.pi / 2, 0.0], return_se=True)
    assert abs(est - 4 / 9) <= 3 * se


def test_unbiased_over_repeated_small_draws():
    env = E.robot_arm()
    rng = np.random.default_rng(77)
    pairs = [(E.sample_input(env, rng), E.sample_input(env, rng)) for _ in range(10)]
    rho = D.robot_arm_cdm()
    for x, xp in pairs:
        ests = [S.estimate_cdm_pair(E.sample_functions(env, rng, 50), env, x, xp)
                for _ in range(200)]
        se = np.std(ests, ddof=1) / np.sqrt(len(ests))
        assert abs(np.mean(ests) - D.eval_distortion(rho, x, xp)) <= 3 * se + 1e-15


class TestTripleSet:
    def test_single_input(self):
        ts = S.build_triple_set(E.robot_arm(), 10, 1, seed=0)
        assert len(ts) == 1
        np.testing.assert_array_equal(ts.x, ts.xp)
        assert ts.target[0] == 0.0

    def test_three_inputs(self):
        assert len(S.build_triple_set(E.quadratic(), 5, 3, seed=0)) == 6

    def test_robot_arm_100(self):
        env = E.robot_arm()
        ts = S.build_triple_set(env, 100, 100, seed=1)
        assert len(ts) == 5050
        assert np.all(ts.target >= 0)
        # rho_hat = 4 mean(r1^2 r2^2) (c - c')^2 <= 16 mean(r1^2 r2^2): check against the
        # functions actually drawn for this seed
        rng = np.random.default_rng(1)
        fs = E.sample_functions(env, rng, 100)
        bound = 16 * np.mean((fs.params[:, 0] * fs.params[:, 1]) ** 2)
        assert ts.target.max() <= bound + 1e-12
        assert bound == pytest.approx(16 / 9, rel=0.5)

    def test_deterministic(self):
        a = S.build_triple_set(E.robot_arm(), 20, 10, seed=5)
        b = S.build_triple_set(E.robot_arm(), 20, 10, seed=5)
        np.testing.assert_array_equal(a.target, b.target)
        np.testing.assert_array_equal(a.x, b.x)

    def test_pair_order_and_swap_invariance(self):
        env = E.robot_arm()
        ts = S.build_triple_set(env, 30, 6, seed=3)
        i, j = np.triu_indices(6)
        np.testing.assert_array_equal(ts.x, ts.inputs[i])
        np.testing.assert_array_equal(ts.xp, ts.inputs[j])
        fs = E.sample_functions(env, np.random.default_rng(3), 30)
        for t in range(len(ts)):
            fwd = S.estimate_cdm_pair(fs, env, ts.x[t], ts.xp[t])
            rev = S.estimate_cdm_pair(fs, env, ts.xp[t], ts.x[t])
            assert ts.target[t] == pytest.approx(fwd, rel=1e-13, abs=1e-16)
            assert fwd == rev

    def test_csv_round_trip(self, tmp_path):
        ts = S.build_triple_set(E.robot_arm(), 10, 5, seed=2)
        path = tmp_path / "triples.csv"
        S.write_triples_csv(ts, path)
        assert path.read_text().splitlines()[0] == "x1,x2,xp1,xp2,target"
        back = S.read_triples_csv(path)
        np.testing.assert_array_equal(back.x, ts.x)
        np.testing.assert_array_equal(back.target, ts.target)


class TestMeasureDistance:
    def test_identical(self):
        m = D.robot_arm_cdm()
        assert S.measure_distance(m, m, E.robot_arm(), 1000, seed=0) == 0.0

    def test_constant_offset(self):
        # hamming is identically 1 on distinct continuous inputs; the other measure is ~0
        env = E.linear(2)
        zero = D.linear_cdm(2, 1e-300)
        assert S.measure_distance(D.hamming(2), zero, env, 500, seed=1) == pytest.approx(1.0)

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            S.measure_distance(D.robot_arm_cdm(), D.quadratic_cdm(), E.robot_arm(), 10, 0)
