import unittest

import numpy as np

from rlcbf.cbf import barrier_values
from rlcbf.envs import (
    BarrierParams,
    CarChainEnv,
    CarParams,
    PendulumEnv,
    build_env,
    car_nominal,
    car_reward,
    car_true_step,
    driver_accelerations,
    pendulum_cost,
    pendulum_nominal,
    pendulum_true_step,
    wrap_angle,
)
from rlcbf.errors import ModelError, RlCbfError
from rlcbf.gp import extract_residual


def _cruising_state(gap=8.0, speed=30.0):
    positions = gap * np.arange(4, -1, -1, dtype=float)
    return np.concatenate([positions, np.full(5, speed)])


class PendulumTests(unittest.TestCase):
    def test_upright_is_an_equilibrium(self):
        np.testing.assert_array_equal(pendulum_true_step(np.zeros(2), 0.0, 0.05), np.zeros(2))

    def test_hand_computed_step(self):
        out = pendulum_true_step(np.array([0.1, 0.0]), 0.0, 0.05)
        self.assertAlmostEqual(out[0], 0.1 + 15.0 * np.sin(0.1) * 0.0025, places=14)
        self.assertAlmostEqual(out[1], 15.0 * np.sin(0.1) * 0.05, places=14)

    def test_odd_symmetry(self):
        s = np.array([0.4, -1.2])
        np.testing.assert_allclose(pendulum_true_step(-s, -3.0, 0.05), -pendulum_true_step(s, 3.0, 0.05), atol=1e-15)

    def test_angle_is_wrapped(self):
        out = pendulum_true_step(np.array([np.pi - 0.01, 2.0]), 0.0, 0.05)
        self.assertLessEqual(abs(out[0]), np.pi)
        self.assertLess(out[0], 0.0)
        self.assertEqual(wrap_angle(-np.pi), np.pi)

    def test_nominal_actuation_column(self):
        k_u = 3.0 / (1.4 * 1.4 ** 2)
        g = pendulum_nominal().g(np.array([0.7, 0.3]), 0.0)
        np.testing.assert_allclose(g[:, 0], [k_u * 0.05 ** 2, k_u * 0.05])

    def test_nominal_agrees_at_origin(self):
        np.testing.assert_array_equal(pendulum_nominal().f(np.zeros(2), 0.0), np.zeros(2))

    def test_true_parameters_leave_no_residual(self):
        env = PendulumEnv()
        s, u = np.array([0.3, -0.5]), np.array([4.0])
        res = extract_residual(s, u, env.true_step(s, u, 0, None), env.true_model(), angle_dims=(0,))
        np.testing.assert_allclose(res.d_hat, np.zeros(2), atol=1e-15)

    def test_nominal_residual_is_difference_of_steps(self):
        env = PendulumEnv()
        s = np.array([0.1, 0.0])
        res = extract_residual(s, np.zeros(1), env.true_step(s, np.zeros(1), 0, None), env.nominal())
        expected = env.true_model().f(s, 0.0) - env.nominal().f(s, 0.0)
        np.testing.assert_allclose(res.d_hat, expected, atol=1e-15)

    def test_control_enters_affinely(self):
        s = np.array([0.5, 0.2])
        base = pendulum_true_step(s, 0.0, 0.05)
        d1 = pendulum_true_step(s, 2.0, 0.05) - base
        d2 = pendulum_true_step(s, 4.0, 0.05) - base
        np.testing.assert_allclose(d2, 2.0 * d1, rtol=1e-12)

    def test_unforced_pendulum_falls(self):
        env = PendulumEnv()
        upper = env.barriers()[0]
        s = np.array([np.pi / 2, 0.0])
        s_next = env.true_step(s, np.zeros(1), 0, None)
        self.assertGreater(s_next[1], 0.0)
        self.assertLess(float(upper.p @ s_next + upper.q), float(upper.p @ s + upper.q))

    def test_cost(self):
        self.assertEqual(pendulum_cost(np.zeros(2), 0.0), 0.0)
        self.assertEqual(pendulum_cost(np.array([1.0, 0.0]), 0.0), 1.0)
        self.assertAlmostEqual(pendulum_cost(np.array([0.5, 1.0]), 10.0), 0.45)
        self.assertAlmostEqual(PendulumEnv().reward(np.array([0.5, 1.0]), np.array([10.0])), -0.45)

    def test_initial_states_are_inside_every_barrier(self):
        env = PendulumEnv()
        rng = np.random.default_rng(0)
        for _ in range(200):
            s = env.sample_init(rng)
            self.assertTrue(np.all(barrier_values(env.barriers(), s) > 0))
            self.assertLessEqual(abs(s[0]), 0.8)

    def test_fixed_seed_fixes_initial_state(self):
        env = PendulumEnv()
        a = env.sample_init(np.random.default_rng(5))
        b = env.sample_init(np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_empty_safe_set_is_a_model_error(self):
        env = PendulumEnv(barrier_params=BarrierParams(custom=[{"p": [1.0, 0.0], "q": -10.0}]))
        with self.assertRaises(ModelError) as ctx:
            env.sample_init(np.random.default_rng(0))
        self.assertIsInstance(ctx.exception, RlCbfError)


class CarTests(unittest.TestCase):
    def test_cruising_drivers_do_not_accelerate(self):
        acc = driver_accelerations(_cruising_state(), 0.0, 4.0, 20.0, 30.0)
        self.assertEqual(acc[[1, 2, 4]].tolist(), [0.0, 0.0, 0.0])

    def test_close_follower_brakes(self):
        state = _cruising_state()
        state[2] = state[1] - 5.0
        acc = driver_accelerations(state, 0.0, 4.0, 20.0, 30.0)
        self.assertEqual(acc[2], -100.0)

    def test_last_car_watches_car_three(self):
        state = _cruising_state(gap=5.0)
        state[:5] = [40.0, 30.0, 20.0, 15.0, 10.0]
        acc = driver_accelerations(state, 0.0, 4.0, 20.0, 30.0)
        self.assertEqual(acc[4], -100.0)

    def test_lead_car_follows_time_profile(self):
        acc = driver_accelerations(_cruising_state(), 2.5, 4.0, 20.0, 30.0)
        self.assertAlmostEqual(acc[0], 30.0 - 10.0 * np.sin(0.5))

    def test_actuation_column(self):
        g = car_nominal().g(_cruising_state(), 0.0)
        expected = np.zeros(10)
        expected[3], expected[8] = 0.01, 0.1
        np.testing.assert_allclose(g[:, 0], expected)

    def test_dropped_damping_shows_in_residual(self):
        params = CarParams(noise_std=0.0)
        state = _cruising_state(gap=12.0)
        state[8] = 20.0
        s_next = car_true_step(state, 0.0, params.dt, None, params=params)
        nominal = car_nominal(CarParams(nominal_kp=4.0, nominal_kb=20.0, nominal_kd=0.0))
        res = extract_residual(state, np.zeros(1), s_next, nominal)
        self.assertAlmostEqual(res.d_hat[8], -0.1 * 20.0 * 0.1, places=12)

    def test_true_parameters_leave_only_noise(self):
        env = CarChainEnv(CarParams(noise_std=0.0))
        state = _cruising_state(gap=9.0)
        state[5:] = [31.0, 29.0, 30.5, 28.0, 32.0]
        s_next = env.true_step(state, np.array([3.0]), 7, None)
        res = extract_residual(state, np.array([3.0]), s_next, env.true_model(), time=env.time(7))
        np.testing.assert_allclose(res.d_hat, np.zeros(10), atol=1e-12)

    def test_control_enters_affinely(self):
        state = _cruising_state()
        base = car_true_step(state, 0.0, 0.1, None)
        delta = car_true_step(state, 5.0, 0.1, None) - base
        expected = np.zeros(10)
        expected[3], expected[8] = 5.0 * 0.01, 5.0 * 0.1
        np.testing.assert_allclose(delta, expected, atol=1e-12)

    def test_reward_terms(self):
        coasting = [(_cruising_state(gap=10.0), -1.0), (_cruising_state(gap=10.0), 0.0)]
        self.assertEqual(car_reward(coasting)[0], 0.0)
        self.assertAlmostEqual(car_reward([(_cruising_state(gap=10.0), 1.0)])[0], -30.0)
        close = _cruising_state(gap=10.0)
        close[3] = close[2] - 2.5
        total, per_step = car_reward([(close, 0.0)])
        self.assertAlmostEqual(total, -200.0)
        self.assertEqual(len(per_step), 1)

    def test_collision_penalty_is_finite(self):
        crash = _cruising_state(gap=10.0)
        crash[3] = crash[2]
        self.assertTrue(np.isfinite(car_reward([(crash, 0.0)])[0]))

    def test_initial_states(self):
        env = CarChainEnv()
        rng = np.random.default_rng(1)
        for _ in range(100):
            state = env.sample_init(rng)
            gaps = state[:4] - state[1:5]
            self.assertTrue(np.all((gaps >= 8.0) & (gaps <= 12.0)))
            self.assertTrue(np.all((state[5:] >= 28.0) & (state[5:] <= 32.0)))
            self.assertTrue(np.all(barrier_values(env.barriers(), state) > 0))

    def test_headway_barrier_values(self):
        env = CarChainEnv()
        state = _cruising_state(gap=5.0)
        np.testing.assert_allclose(barrier_values(env.barriers(), state), [3.0, 3.0])

    def test_safety_metric_is_min_headway_around_car_four(self):
        env = CarChainEnv()
        state = _cruising_state(gap=10.0)
        state[4] = state[3] - 1.5
        self.assertAlmostEqual(env.safety_metric([_cruising_state(), state]), 1.5)
        self.assertTrue(env.is_unsafe(1.5))

    def test_features_are_centred(self):
        env = CarChainEnv()
        np.testing.assert_allclose(env.features(_cruising_state(gap=10.0)), np.zeros(9))


class BuildEnvTests(unittest.TestCase):
    def test_known_names(self):
        self.assertIsInstance(build_env("pendulum"), PendulumEnv)
        self.assertIsInstance(build_env("car"), CarChainEnv)

    def test_custom_barriers_replace_defaults(self):
        from rlcbf.envs import BarrierParams

        env = build_env("pendulum", barriers=BarrierParams(custom=[{"p": [-1.0, 0.0], "q": 0.5, "eta": 0.2}]))
        self.assertEqual(len(env.barriers()), 1)
        self.assertEqual(env.barriers()[0].eta, 0.2)

    def test_unknown_name(self):
        with self.assertRaises(ValueError):
            build_env("cartpole")


if __name__ == "__main__":
    unittest.main()
