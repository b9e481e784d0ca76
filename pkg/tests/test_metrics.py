"""
Tests for risk, covariance, autocovariance and rate-slope measurements.
"""

import os
import sys
import unittest
import logging
from dataclasses import replace

import numpy as np
import pandas as pd

# Add the parent directory to the path so we can import from src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.chain_sim import BayesRisk, ChainConfig, bayes_rule, generate, generate_eval
from src.ensemble import BaseLearnerSpec, train
from src.errors import ArgumentError
from src.metrics import (
    MetricsReport,
    SeedTask,
    covariance_from_margins,
    error_rate,
    excess_risk,
    loglog_slope,
    margin_autocov,
    margins_along,
    pairwise_margin_cov,
    rate_slope,
    run_seed,
    seed_tasks,
    summarize,
    variance_functional,
)
from src.resampling import ResamplingScheme, draw_uniform

logging.basicConfig(level=logging.INFO)


class TestRisk(unittest.TestCase):
    """Error rate and excess risk."""

    @classmethod
    def setUpClass(cls):
        cls.config = ChainConfig(t_mix=3, d0=2, n=400, eta_std=0.5, seed=2).validate()
        traj = generate(cls.config)
        cls.model = train(traj, draw_uniform(traj.n, 5, 80, seed=1), BaseLearnerSpec.axis_tree(max_depth=3))
        cls.eval_traj = generate_eval(cls.config, 2000, seed=9)

    def test_zero_margin_is_an_error(self):
        self.assertAlmostEqual(error_rate(np.array([0.0, 1.0, -1.0]), np.array([1, 1, 1])), 2 / 3)
        self.assertEqual(error_rate(np.array([0.5, -0.5]), np.array([1, -1])), 0.0)

    def test_excess_risk_subtracts_bayes(self):
        raw = error_rate(self.model.margins(self.eval_traj.x), np.asarray(self.eval_traj.y))
        estimate = excess_risk(self.model, self.eval_traj, 0.1)
        self.assertAlmostEqual(estimate.value, raw - 0.1)
        self.assertAlmostEqual(estimate.se, np.sqrt(raw * (1 - raw) / 2000))

    def test_bayes_se_is_combined(self):
        plain = excess_risk(self.model, self.eval_traj, 0.1)
        noisy = excess_risk(self.model, self.eval_traj, BayesRisk(0.1, 0.01))
        self.assertAlmostEqual(noisy.value, plain.value)
        self.assertAlmostEqual(noisy.se, np.hypot(plain.se, 0.01))

    def test_family_mismatch(self):
        other = generate_eval(replace(self.config, eta_std=1.0), 100, seed=0)
        with self.assertRaises(ArgumentError):
            excess_risk(self.model, other, 0.0)

    def test_eval_length_does_not_change_family(self):
        excess_risk(self.model, generate_eval(self.config, 50, seed=1), 0.0)


class TestSeedRuns(unittest.TestCase):
    """Per-seed training runs."""

    def setUp(self):
        self.config = ChainConfig(t_mix=5, d0=2, n=200, eta_std=0.5).validate()
        self.scheme = ResamplingScheme.uniform()
        self.spec = BaseLearnerSpec.axis_tree(max_depth=2)

    def test_joint_and_conditional_seeds(self):
        joint = seed_tasks(self.config, self.scheme, self.spec, 4, 3, 100, master_seed=1)
        self.assertEqual(len({t.config.seed for t in joint}), 4)
        self.assertEqual(len({t.scheme.seed for t in joint}), 4)
        self.assertEqual(len({t.eval_seed for t in joint}), 1)
        conditional = seed_tasks(self.config, self.scheme, self.spec, 4, 3, 100, master_seed=1, conditional=True)
        self.assertEqual(len({t.config.seed for t in conditional}), 1)
        self.assertEqual([t.scheme.seed for t in conditional], [t.scheme.seed for t in joint])

    def test_run_seed(self):
        task = SeedTask(self.config, self.scheme, self.spec, m=4, eval_n=300, eval_seed=5, seed_index=2)
        outcome = run_seed(task)
        self.assertEqual(outcome.seed_index, 2)
        self.assertEqual(outcome.learner_margins.shape, (4,))
        self.assertTrue(np.all(np.abs(outcome.learner_margins) <= 1))
        self.assertTrue(0 <= outcome.ensemble_error <= 1)
        self.assertEqual(outcome.mean_subsample_size, 50)
        self.assertIsNone(outcome.p_hat)
        self.assertEqual(outcome.scheme_tag, "uniform")
        # deterministic in its inputs
        np.testing.assert_array_equal(run_seed(task).learner_margins, outcome.learner_margins)

    def test_pairwise_cov_warns_on_few_seeds(self):
        with self.assertLogs("specroute.metrics", level="WARNING"):
            estimate = pairwise_margin_cov(self.config, self.scheme, self.spec, n_seeds=3, m=3, eval_n=200)
        self.assertTrue(np.isfinite(estimate.value))
        self.assertGreaterEqual(estimate.se, 0.0)

    def test_pairwise_cov_needs_two_seeds(self):
        with self.assertRaises(ArgumentError):
            pairwise_margin_cov(self.config, self.scheme, self.spec, n_seeds=1)


class TestCovariance(unittest.TestCase):
    """Across-seed pairwise covariance."""

    def test_matches_sample_covariance(self):
        margins = np.random.default_rng(0).standard_normal((12, 5))
        cov = np.cov(margins, rowvar=False)
        expected = (cov.sum() - np.trace(cov)) / (5 * 4)
        self.assertAlmostEqual(covariance_from_margins(margins).value, expected, places=12)

    def test_shared_component_gives_positive_cov(self):
        rng = np.random.default_rng(1)
        shared = rng.standard_normal((400, 1))
        margins = shared + 0.5 * rng.standard_normal((400, 4))
        estimate = covariance_from_margins(margins)
        self.assertAlmostEqual(estimate.value, 1.0, delta=5 * estimate.se + 0.05)

    def test_shape_checks(self):
        with self.assertRaises(ArgumentError):
            covariance_from_margins(np.zeros((1, 4)))
        with self.assertRaises(ArgumentError):
            covariance_from_margins(np.zeros((5, 1)))

    def test_report_row(self):
        report = MetricsReport(0.01, 0.001, 0.002, 0.0005, np.array([0.9, 0.5]), 1.5, 100, 20, conditional_cov=0.001)
        row = report.to_row()
        self.assertEqual(row["autocov_0"], 0.9)
        self.assertEqual(row["conditional_cov"], 0.001)
        self.assertNotIn("conditional_cov", MetricsReport(0.0, 0.0, 0.0, 0.0).to_row())


class TestAutocovariance(unittest.TestCase):
    """Margin autocovariance and the truncated variance functional."""

    @classmethod
    def setUpClass(cls):
        cls.config = ChainConfig(t_mix=20, d0=1, n=500, eta_std=1.0, seed=4).validate()
        cls.traj = generate(cls.config)
        cls.h = staticmethod(bayes_rule(cls.config))
        cls.values = margins_along(cls.traj, cls.h)

    def brute(self, values: np.ndarray, k: int) -> float:
        n = values.size
        return float(np.sum(values[: n - k] * values[k:]) / (n - k))

    def test_uncentered_matches_direct_sums(self):
        gamma = margin_autocov(self.traj, self.h, 10)
        self.assertAlmostEqual(gamma[0], 1.0, places=12)
        for k in range(11):
            self.assertAlmostEqual(gamma[k], self.brute(self.values, k), places=10)

    def test_centered(self):
        centered = self.values - self.values.mean()
        gamma = margin_autocov(self.traj, self.h, 5, centered=True)
        for k in range(6):
            self.assertAlmostEqual(gamma[k], self.brute(centered, k), places=10)

    def test_variance_functional(self):
        n, lag = self.traj.n, 7
        centered = self.values - self.values.mean()
        expected = self.brute(centered, 0) + 2 * sum((1 - k / n) * self.brute(centered, k) for k in range(1, lag + 1))
        self.assertAlmostEqual(variance_functional(self.traj, self.h, lag), expected, places=10)
        self.assertAlmostEqual(variance_functional(self.traj, self.h, 0), self.brute(centered, 0), places=12)

    def test_lag_bounds(self):
        with self.assertRaises(ArgumentError):
            margin_autocov(self.traj, self.h, 250)
        with self.assertRaises(ArgumentError):
            margin_autocov(self.traj, self.h, -1)
        with self.assertRaises(ArgumentError):
            variance_functional(self.traj, self.h, 500)


class TestSlopes(unittest.TestCase):
    """Log-log fits and grouping."""

    def test_power_law(self):
        xs = np.array([1.0, 2.0, 4.0, 8.0])
        self.assertAlmostEqual(loglog_slope(xs, 3.0 * xs ** -2), -2.0, places=10)
        self.assertAlmostEqual(loglog_slope([1, 10], [5, 50]), 1.0, places=10)

    def test_rate_slope(self):
        points = [(t, 0.2 * t ** 0.5) for t in (10, 30, 100)]
        self.assertAlmostEqual(rate_slope(points), 0.5, places=10)
        with self.assertRaises(ArgumentError):
            rate_slope(points[:2])

    def test_bad_inputs(self):
        with self.assertRaises(ArgumentError):
            loglog_slope([1.0], [1.0])
        with self.assertRaises(ArgumentError):
            loglog_slope([1.0, 2.0], [1.0, 0.0])
        with self.assertRaises(ArgumentError):
            loglog_slope([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_summarize(self):
        frame = pd.DataFrame({
            "scheme": ["a", "a", "a", "b", "b"],
            "risk": [1.0, 2.0, 3.0, 5.0, 7.0],
        })
        out = summarize(frame, ["scheme"], ["risk"])
        self.assertEqual(list(out.columns), ["scheme", "risk_mean", "risk_se", "seeds"])
        row = out.set_index("scheme").loc["a"]
        self.assertAlmostEqual(row["risk_mean"], 2.0)
        self.assertAlmostEqual(row["risk_se"], 1.0 / np.sqrt(3))
        self.assertEqual(row["seeds"], 3)


if __name__ == "__main__":
    unittest.main()
