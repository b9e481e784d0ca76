"""
Tests for the synthetic chain generators and mixing diagnostics.
"""

import os
import sys
import math
import tempfile
import unittest
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

# Add the parent directory to the path so we can import from src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.chain_sim import (
    ChainConfig,
    Topology,
    autocorrelation,
    bayes_risk_oracle,
    bayes_rule,
    generate,
    generate_eval,
    integrated_autocorr_time,
    load_trajectory,
    save_trajectory,
    trajectory_frame,
)
from src.errors import ArgumentError, ConfigurationError

logging.basicConfig(level=logging.INFO)


class TestChainConfig(unittest.TestCase):
    """Validation of chain parameters."""

    def test_defaults(self):
        config = ChainConfig(t_mix=10, d0=3, n=100)
        self.assertEqual(config.v, (1, 1, 1))
        self.assertAlmostEqual(config.lam, 0.9)
        self.assertAlmostEqual(float(np.linalg.norm(replace(config, delta=0.7).mu_v)), 0.7)

    def test_invalid(self):
        bad = [
            ChainConfig(t_mix=0, d0=1, n=100),
            ChainConfig(t_mix=10, d0=1, n=1),
            ChainConfig(t_mix=10, d0=2, n=100, v=(1, 0)),
            ChainConfig(t_mix=10, d0=1, n=100, eta_std=0.0),
            ChainConfig(t_mix=10, d0=1, n=100, topology=Topology.lattice(8)),
        ]
        for config in bad:
            with self.assertRaises(ConfigurationError):
                config.validate()

    def test_family_key_ignores_seed_and_length(self):
        a = ChainConfig(t_mix=10, d0=2, n=100, seed=1)
        b = ChainConfig(t_mix=10, d0=2, n=5000, seed=2)
        self.assertEqual(a.family_key(), b.family_key())
        self.assertNotEqual(a.family_key(), replace(a, t_mix=11).family_key())

    def test_topology(self):
        lattice = Topology.lattice(4)
        self.assertEqual(lattice.cell(6), (1, 2))
        self.assertEqual(Topology.from_tag(lattice.tag()), lattice)
        with self.assertRaises(ArgumentError):
            Topology.path().cell(0)
        with self.assertRaises(ConfigurationError):
            Topology.from_tag("torus")


class TestGenerators(unittest.TestCase):
    """AR(1) and lattice witnesses."""

    def test_deterministic(self):
        config = ChainConfig(t_mix=10, d0=2, n=500, seed=3)
        a, b = generate(config), generate(config)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)
        self.assertFalse(np.array_equal(a.x, generate(replace(config, seed=4)).x))

    def test_labels(self):
        traj = generate(ChainConfig(t_mix=5, d0=2, n=1000, seed=1))
        self.assertEqual(traj.y.dtype, np.int8)
        self.assertTrue(set(np.unique(traj.y)) <= {-1, 1})
        self.assertFalse(traj.x.flags.writeable)

    def test_fast_mixing_is_white(self):
        """t_mix = 1 gives lag-1 autocorrelation near zero."""
        n = 20000
        traj = generate(ChainConfig(t_mix=1, d0=1, n=n, seed=5))
        self.assertLess(abs(autocorrelation(traj.xi[:, 0], 1)[1]), 4.0 / math.sqrt(n))

    def test_stationary_unit_variance(self):
        traj = generate(ChainConfig(t_mix=10, d0=1, n=50000, seed=6))
        self.assertAlmostEqual(float(np.var(traj.xi[:, 0])), 1.0, delta=0.1)

    def test_integrated_autocorrelation_time(self):
        """Slow chains have an autocorrelation time close to t_mix."""
        traj = generate(ChainConfig(t_mix=50, d0=1, n=50000, seed=7))
        tau = integrated_autocorr_time(traj.xi[:, 0])
        self.assertGreater(tau, 25)
        self.assertLess(tau, 100)

    def test_drift(self):
        traj = generate(ChainConfig(t_mix=1, d0=1, n=10000, drift_nu=5.0, seed=8))
        shift = traj.x[-1000:, 0].mean() - traj.x[:1000, 0].mean()
        self.assertAlmostEqual(float(shift), 4.5, delta=0.2)

    def test_halves_agree(self):
        """Without drift, both halves share mean and variance within 4 standard errors."""
        n, t_mix = 20000, 10
        traj = generate(ChainConfig(t_mix=t_mix, d0=2, n=n, seed=10))
        lam = 1.0 - 1.0 / t_mix
        half = n // 2
        se_mean = math.sqrt((1 + lam) / (1 - lam) / half)
        se_var = math.sqrt(2 * (1 + lam ** 2) / (1 - lam ** 2) / half)
        for column in range(2):
            first, second = traj.xi[:half, column], traj.xi[half:, column]
            self.assertLess(abs(first.mean() - second.mean()), 4 * math.sqrt(2) * se_mean)
            self.assertLess(abs(first.var() - second.var()), 4 * math.sqrt(2) * se_var)

    def test_drift_slope(self):
        """The fitted trend of X_t is nu / n per step, within 10% over 20 seeds."""
        n, nu = 10000, 5.0
        t = np.arange(n)
        slopes = []
        for seed in range(20):
            traj = generate(ChainConfig(t_mix=5, d0=2, n=n, drift_nu=nu, seed=100 + seed))
            slopes.extend(np.polyfit(t, traj.x[:, column], 1)[0] for column in range(2))
        self.assertAlmostEqual(float(np.mean(slopes)), nu / n, delta=0.1 * nu / n)

    def test_lattice_correlation_length(self):
        """Correlation at axis distance t_mix is about exp(-1) of the variance, within 25%."""
        side, t_mix = 64, 8
        lagged = variance = 0.0
        for seed in range(20):
            traj = generate(ChainConfig(t_mix=t_mix, d0=4, n=side * side, topology=Topology.lattice(side),
                                        seed=200 + seed))
            field = traj.xi.reshape(side, side, 4)
            # the field has mean zero, so raw moments are unbiased
            lagged += float((field[:, :-t_mix] * field[:, t_mix:]).mean() + (field[:-t_mix] * field[t_mix:]).mean())
            variance += 2.0 * float((field ** 2).mean())
        self.assertAlmostEqual(lagged / variance, math.exp(-1.0), delta=0.25 * math.exp(-1.0))

    def test_lattice(self):
        """Neighbouring cells along either axis correlate at about 1 - 1/t_mix."""
        side = 64
        traj = generate(ChainConfig(t_mix=8, d0=1, n=side * side, topology=Topology.lattice(side), seed=9))
        field = traj.xi[:, 0].reshape(side, side)
        across = np.corrcoef(field[:, :-1].ravel(), field[:, 1:].ravel())[0, 1]
        down = np.corrcoef(field[:-1, :].ravel(), field[1:, :].ravel())[0, 1]
        self.assertAlmostEqual(float(across), 0.875, delta=0.1)
        self.assertAlmostEqual(float(down), 0.875, delta=0.1)

    def test_eval_draws(self):
        """Evaluation draws are reproducible and come from the stationary law."""
        config = ChainConfig(t_mix=50, d0=2, n=100, delta=0.5, seed=1)
        a = generate_eval(config, 20000, seed=2)
        b = generate_eval(replace(config, seed=99), 20000, seed=2)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_allclose(a.x.mean(axis=0), config.mu_v, atol=0.05)
        self.assertLess(abs(autocorrelation(a.x[:, 0], 1)[1]), 0.05)


class TestBayes(unittest.TestCase):
    """Bayes rule and Monte-Carlo Bayes risk."""

    def test_bayes_rule(self):
        config = ChainConfig(t_mix=1, d0=2, n=10, v=(1, -1))
        rule = bayes_rule(config)
        np.testing.assert_array_equal(rule(np.array([[2.0, 1.0], [0.0, 1.0]])), [1, -1])

    def test_bayes_risk_matches_closed_form(self):
        """For delta = 0 the flip probability is arctan(eta_std / sqrt(d0)) / pi."""
        config = ChainConfig(t_mix=1, d0=2, n=10, eta_std=0.5)
        risk = bayes_risk_oracle(config, 200000, seed=1)
        expected = math.atan(0.5 / math.sqrt(2)) / math.pi
        self.assertAlmostEqual(risk.value, expected, delta=5 * risk.se + 1e-3)

    def test_too_few_draws(self):
        with self.assertRaises(ArgumentError):
            bayes_risk_oracle(ChainConfig(t_mix=1, d0=1, n=10), 100)


class TestPersistence(unittest.TestCase):
    """Trajectory files and frames."""

    def test_save_load(self):
        traj = generate(ChainConfig(t_mix=10, d0=3, n=200, delta=0.25, v=(1, -1, 1), seed=12))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "traj.bin"
            save_trajectory(traj, path)
            loaded = load_trajectory(path)
        np.testing.assert_array_equal(loaded.x, traj.x)
        np.testing.assert_array_equal(loaded.y, traj.y)
        self.assertEqual(loaded.config, traj.config)

    def test_frame(self):
        traj = generate(ChainConfig(t_mix=2, d0=2, n=20, seed=1))
        frame = trajectory_frame(traj)
        self.assertEqual(list(frame.columns), ["index", "x0", "x1", "y"])
        self.assertEqual(len(frame), 20)


if __name__ == '__main__':
    unittest.main()
