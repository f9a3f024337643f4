import unittest

import numpy as np

from rlcbf.errors import ModelError, ShapeError
from rlcbf.gp import (
    KernelHyper,
    Residual,
    ResidualWindow,
    ZeroResidual,
    confidence_interval,
    extract_residual,
    gp_fit,
    gp_predict,
    gp_predict_batch,
    se_kernel,
    window_update,
)
from rlcbf.models import NominalModel
from rlcbf.selftest import gp_oracle_suite


def _identity_model(dim):
    return NominalModel(lambda s, t=0.0: np.asarray(s, dtype=float).copy(), lambda s, t=0.0: np.zeros((dim, 1)))


class GpFitTests(unittest.TestCase):
    def test_empty_model_returns_prior(self):
        model = gp_fit([], KernelHyper(signal_variance=2.0), output_dim=3)
        mu, sigma = gp_predict(model, np.array([0.3, -1.0]))
        np.testing.assert_array_equal(mu, np.zeros(3))
        np.testing.assert_allclose(sigma, np.full(3, np.sqrt(2.0)))

    def test_empty_model_needs_output_dim(self):
        with self.assertRaises(ModelError):
            gp_fit([], KernelHyper())

    def test_single_point_posterior(self):
        x0 = np.array([0.2, -0.4])
        model = gp_fit([Residual(x0, np.array([3.0]))], KernelHyper(1.0, 1.0, 0.01))
        mu, sigma = gp_predict(model, x0)
        self.assertAlmostEqual(mu[0], 3.0 / 1.01, places=12)
        self.assertAlmostEqual(sigma[0] ** 2, 1.0 - 1.0 / 1.01, places=12)

    def test_noiseless_interpolation(self):
        x0 = np.array([0.5])
        model = gp_fit([Residual(x0, np.array([-1.5]))], KernelHyper(1.0, 1.0, 0.0))
        mu, sigma = gp_predict(model, x0)
        self.assertAlmostEqual(mu[0], -1.5, places=8)
        self.assertLessEqual(sigma[0] ** 2, 1e-8)

    def test_far_query_reverts_to_prior(self):
        model = gp_fit([Residual(np.zeros(1), np.array([2.0]))], KernelHyper(0.5, 1.5, 0.01))
        mu, sigma = gp_predict(model, np.array([50.0]))
        self.assertAlmostEqual(mu[0], 0.0, places=12)
        self.assertAlmostEqual(sigma[0] ** 2, 1.5, places=12)

    def test_symmetric_points_cancel_at_midpoint(self):
        data = [Residual(np.array([-1.0]), np.array([0.7])), Residual(np.array([1.0]), np.array([-0.7]))]
        mu, _ = gp_predict(gp_fit(data, KernelHyper()), np.array([0.0]))
        self.assertAlmostEqual(mu[0], 0.0, places=12)

    def test_cholesky_reconstructs_kernel(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(15, 2))
        hyper = KernelHyper(0.8, 1.2, 0.05)
        model = gp_fit([Residual(x, np.array([0.0])) for x in X], hyper)
        K = se_kernel(X, X, hyper) + hyper.noise_variance * np.eye(15)
        self.assertLessEqual(np.linalg.norm(model.chol @ model.chol.T - K), 1e-8)

    def test_capacity_keeps_latest_points(self):
        data = [Residual(np.array([float(i)]), np.array([float(i)])) for i in range(1500)]
        model = gp_fit(data, KernelHyper(noise_variance=0.1), cap=1000)
        self.assertEqual(model.size, 1000)
        self.assertEqual(model.inputs[0, 0], 500.0)
        self.assertEqual(model.inputs[-1, 0], 1499.0)

    def test_sigma_is_shared_and_non_negative(self):
        rng = np.random.default_rng(0)
        data = [Residual(rng.normal(size=2), rng.normal(size=3)) for _ in range(10)]
        model = gp_fit(data, KernelHyper())
        for query in rng.normal(size=(20, 2)):
            _, sigma = gp_predict(model, query)
            self.assertTrue(np.all(sigma >= 0))
            self.assertTrue(np.all(sigma == sigma[0]))

    def test_observation_never_increases_variance_at_its_input(self):
        rng = np.random.default_rng(11)
        for noise in (0.02, 0.0):
            hyper = KernelHyper(0.9, 1.3, noise)
            data = [Residual(rng.normal(size=2) * 2.0, rng.normal(size=1)) for _ in range(8)]
            before_model = gp_fit(data, hyper)
            for query in rng.normal(size=(10, 2)):
                _, before = gp_predict(before_model, query)
                _, after = gp_predict(gp_fit(data + [Residual(query, np.array([0.4]))], hyper), query)
                self.assertLessEqual(after[0] ** 2, before[0] ** 2 + 1e-9)
                if noise == 0.0:
                    self.assertLessEqual(after[0] ** 2, 1e-5)

    def test_empty_model_checks_query_dimension(self):
        model = gp_fit([], KernelHyper(), output_dim=2, input_dim=3)
        with self.assertRaises(ShapeError):
            gp_predict(model, np.zeros(2))
        mu, _ = gp_predict(model, np.zeros(3))
        self.assertEqual(mu.shape, (2,))

    def test_fit_checks_input_dimension(self):
        with self.assertRaises(ShapeError):
            gp_fit([Residual(np.zeros(2), np.zeros(1))], KernelHyper(), input_dim=3)
        model = gp_fit([Residual(np.zeros(2), np.zeros(1))], KernelHyper())
        self.assertEqual(model.input_dim, 2)
        with self.assertRaises(ShapeError):
            gp_predict(model, np.zeros(4))

    def test_matches_dense_reference(self):
        result = gp_oracle_suite()
        self.assertTrue(result.passed, result.failures[:5])
        self.assertLessEqual(result.worst, 1e-8)


class ResidualTests(unittest.TestCase):
    def test_exact_model_gives_zero_residual(self):
        model = _identity_model(2)
        res = extract_residual(np.array([0.1, 0.2]), np.array([1.0]), np.array([0.1, 0.2]), model)
        np.testing.assert_array_equal(res.d_hat, np.zeros(2))

    def test_angle_difference_is_wrapped(self):
        model = _identity_model(2)
        s = np.array([-np.pi + 0.01, 0.0])
        s_next = np.array([np.pi - 0.01, 0.0])
        res = extract_residual(s, np.zeros(1), s_next, model, angle_dims=(0,))
        self.assertAlmostEqual(res.d_hat[0], -0.02, places=12)

    def test_features_replace_regression_input(self):
        model = _identity_model(2)
        res = extract_residual(np.array([1.0, 2.0]), np.zeros(1), np.array([1.0, 2.0]), model, features=lambda s: s[:1] * 10)
        np.testing.assert_array_equal(res.s, [10.0])

    def test_non_finite_transition_is_rejected(self):
        with self.assertRaises(ModelError):
            extract_residual(np.array([np.nan, 0.0]), np.zeros(1), np.zeros(2), _identity_model(2))


class WindowTests(unittest.TestCase):
    def test_window_drops_oldest(self):
        window = ResidualWindow(cap=3)
        data = [Residual(np.array([float(i)]), np.array([0.0])) for i in range(5)]
        model = window_update(window, data, KernelHyper(), output_dim=1)
        self.assertEqual(len(window), 3)
        self.assertEqual(model.inputs[:, 0].tolist(), [2.0, 3.0, 4.0])


class BandTests(unittest.TestCase):
    def test_interval_arithmetic(self):
        low, high = confidence_interval(np.array([1.0]), np.array([0.5]), 2.0)
        self.assertEqual((low[0], high[0]), (0.0, 2.0))

    def test_zero_sigma_is_degenerate(self):
        low, high = confidence_interval(np.array([0.3]), np.array([0.0]), 2.0)
        self.assertEqual(low[0], high[0])

    def test_zero_residual_model(self):
        mu, sigma = ZeroResidual(3).predict(np.ones(5))
        self.assertEqual(mu.tolist(), [0.0, 0.0, 0.0])
        self.assertEqual(sigma.tolist(), [0.0, 0.0, 0.0])

    def test_zero_residual_band(self):
        band = ZeroResidual(2).band(np.ones(3), np.array([-1.0]), np.array([1.0]))
        np.testing.assert_array_equal(band.mean(np.array([0.5])), np.zeros(2))
        np.testing.assert_array_equal(band.sigma, np.zeros(2))


class ActionInputTests(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(4)
        self.hyper = KernelHyper(1.0, 1.0, 1e-4, action_scale=2.0)
        self.data = []
        for _ in range(60):
            x = rng.uniform(-1.0, 1.0, size=1)
            a = rng.uniform(-2.0, 2.0, size=1)
            self.data.append(Residual(x, np.array([0.5 * np.sin(x[0]) + 2.0 * a[0]]), a))
        self.model = gp_fit(self.data, self.hyper)
        self.low, self.high = np.array([-2.0]), np.array([2.0])

    def test_gain_recovers_linear_action_term(self):
        for x in (-0.5, 0.0, 0.6):
            band = self.model.band(np.array([x]), self.low, self.high)
            self.assertAlmostEqual(band.gain[0, 0], 2.0, delta=0.1)
            self.assertAlmostEqual(band.mu[0], 0.5 * np.sin(x), delta=0.05)

    def test_band_mean_is_the_posterior_mean_at_the_action(self):
        x = np.array([0.3])
        band = self.model.band(x, self.low, self.high)
        for a in (-2.0, -0.7, 0.0, 1.1, 2.0):
            mu, _ = gp_predict_batch(self.model, x[None, :], np.array([[a]]))
            self.assertAlmostEqual(band.mean(np.array([a]))[0], mu[0, 0], places=9)

    def test_band_sigma_covers_every_action_in_the_box(self):
        x = np.array([1.7])
        band = self.model.band(x, self.low, self.high)
        actions = np.linspace(-2.0, 2.0, 41)[:, None]
        _, sigma = gp_predict_batch(self.model, np.repeat(x[None, :], 41, axis=0), actions, observation_noise=True)
        self.assertTrue(np.all(sigma[:, 0] <= band.sigma[0] + 1e-12))
        self.assertAlmostEqual(band.sigma[0], max(sigma[0, 0], sigma[-1, 0]), places=12)

    def test_empty_model_band_is_the_prior_at_the_corners(self):
        model = gp_fit([], KernelHyper(1.0, 0.5, 0.01, action_scale=[2.0, 4.0]), output_dim=2, input_dim=1)
        band = model.band(np.zeros(1), np.array([-2.0, -4.0]), np.array([2.0, 4.0]))
        np.testing.assert_array_equal(band.mu, np.zeros(2))
        np.testing.assert_array_equal(band.gain, np.zeros((2, 2)))
        np.testing.assert_allclose(band.sigma, np.full(2, np.sqrt(0.5 * 3.0 + 0.01)))

    def test_state_only_band_adds_observation_noise(self):
        model = gp_fit([Residual(np.zeros(1), np.array([1.0]))], KernelHyper(1.0, 1.0, 0.01))
        _, latent = gp_predict(model, np.array([0.5]))
        band = model.band(np.array([0.5]), np.array([-1.0]), np.array([1.0]))
        self.assertAlmostEqual(band.sigma[0] ** 2, latent[0] ** 2 + 0.01, places=12)
        np.testing.assert_array_equal(band.gain, np.zeros((1, 1)))

    def test_missing_action_is_rejected(self):
        with self.assertRaises(ShapeError):
            gp_fit([Residual(np.zeros(1), np.zeros(1))], self.hyper)

    def test_extracted_residual_keeps_the_action(self):
        res = extract_residual(np.zeros(2), np.array([0.7]), np.zeros(2), _identity_model(2))
        np.testing.assert_array_equal(res.a, [0.7])


if __name__ == "__main__":
    unittest.main()
