"""
Tests for preset files, scheme expressions and the preset runners.
"""

import os
import sys
import tempfile
import unittest
import logging
from pathlib import Path

import numpy as np
import pandas as pd

# Add the parent directory to the path so we can import from src
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config import Settings
from src.errors import ConfigurationError, UnknownPresetError
from src.presets import (
    PRESET_DIR,
    RISK_FLOOR,
    RUNNERS,
    ExperimentPreset,
    RateCell,
    available_presets,
    chain_config,
    learner_spec,
    load_preset,
    parse_scheme,
    rate_slopes,
    rate_task,
    theory_row,
)
from src.resampling import SchemeKind

logging.basicConfig(level=logging.INFO)


def make_preset(runner: str = "rates", grid=None, settings=None, name: str = "tiny") -> ExperimentPreset:
    return ExperimentPreset(name, runner, "", dict(settings or {}), dict(grid or {}))


class TestPresetFiles(unittest.TestCase):
    """Shipped and temporary preset files."""

    def test_shipped_presets_load(self):
        """Every preset in the repository parses and its schemes are valid."""
        names = available_presets(PRESET_DIR)
        self.assertIn("rates-ar1", names)
        self.assertIn("theory-grid", names)
        for name in names:
            preset = load_preset(name, PRESET_DIR)
            self.assertIn(preset.runner, RUNNERS)
            settings = preset.apply(Settings())
            for text in preset.values("schemes", default=[]):
                parse_scheme(text, 10, settings).validate()

    def test_unknown_preset_lists_available(self):
        with tempfile.TemporaryDirectory() as tmp:
            Path(tmp, "alpha.ini").write_text("[preset]\nrunner = theory\n")
            with self.assertRaises(UnknownPresetError) as ctx:
                load_preset("beta", Path(tmp))
            self.assertEqual(ctx.exception.available, ["alpha"])

    def test_bad_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            Path(tmp, "nosection.ini").write_text("[grid]\nns = 1\n")
            Path(tmp, "badrunner.ini").write_text("[preset]\nrunner = nope\n")
            with self.assertRaises(ConfigurationError):
                load_preset("nosection", Path(tmp))
            with self.assertRaises(ConfigurationError):
                load_preset("badrunner", Path(tmp))

    def test_sections(self):
        with tempfile.TemporaryDirectory() as tmp:
            Path(tmp, "p.ini").write_text(
                "[preset]\nrunner = rates\ndescription = demo\n\n"
                "[settings]\nm = 4\n\n[grid]\nt_mix = 1, 5\nsave_models = yes\n"
            )
            preset = load_preset("p", Path(tmp))
        self.assertEqual(preset.description, "demo")
        self.assertEqual(preset.apply(Settings()).m, 4)
        self.assertEqual(preset.values("t_mix", int), [1, 5])
        self.assertTrue(preset.flag("save_models"))
        self.assertFalse(preset.flag("conditional"))


class TestPresetAccessors(unittest.TestCase):
    """Grid values, defaults and the config hash."""

    def test_values_and_defaults(self):
        preset = make_preset(grid={"d0": "3", "ns": "10, 20,30", "blank": " "})
        self.assertEqual(preset.value("d0", int), 3)
        self.assertEqual(preset.value("blank", int, 7), 7)
        self.assertEqual(preset.values("ns", int), [10, 20, 30])
        self.assertEqual(preset.values("missing", int, [1]), [1])
        with self.assertRaises(ConfigurationError):
            preset.value("missing", int)
        with self.assertRaises(ConfigurationError):
            make_preset(grid={"d0": "two"}).value("d0", int)

    def test_config_hash(self):
        preset = make_preset(grid={"t_mix": "1"})
        base = Settings()
        self.assertEqual(preset.config_hash(base), preset.config_hash(Settings()))
        self.assertNotEqual(preset.config_hash(base), preset.config_hash(base.with_overrides(seeds=3)))
        self.assertNotEqual(preset.config_hash(base), make_preset(grid={"t_mix": "2"}).config_hash(base))
        operational = base.with_overrides(threads=8, out_dir="elsewhere", log_level="DEBUG")
        self.assertEqual(preset.config_hash(base), preset.config_hash(operational))

    def test_chain_config_defaults(self):
        config = chain_config(make_preset(), Settings(n=500), 10)
        self.assertEqual((config.d0, config.delta, config.eta_std, config.n), (2, 0.0, 0.5, 500))
        lattice = chain_config(make_preset(grid={"topology": "lattice2d:8"}), Settings(), 3, n=64)
        self.assertTrue(lattice.topology.is_lattice)

    def test_learner_spec(self):
        settings = Settings(max_depth=4, ridge=0.5)
        self.assertEqual(learner_spec(make_preset(), settings).max_depth, 4)
        self.assertEqual(learner_spec(make_preset(grid={"learner": "linear_ridge"}), settings).reg, 0.5)
        with self.assertRaises(ConfigurationError):
            learner_spec(make_preset(grid={"learner": "forest"}), settings)


class TestSchemeExpressions(unittest.TestCase):
    """Scheme expression parsing."""

    def setUp(self):
        self.settings = Settings(lag_stride=3)

    def test_kinds(self):
        cases = {
            "uniform": SchemeKind.UNIFORM,
            "lag_thin": SchemeKind.LAG_THIN,
            "tmix_thin": SchemeKind.TMIX_THIN,
            "stationary_boot(tmix)": SchemeKind.STATIONARY_BOOT,
            "circular_bb(20)": SchemeKind.CIRCULAR_BB,
            "oracle_bb": SchemeKind.ORACLE_BB,
            "auto_bb": SchemeKind.AUTO_BB,
            "spectral": SchemeKind.SPECTRAL_ROUTE,
            " Spectral(4) ": SchemeKind.SPECTRAL_ROUTE,
        }
        for text, kind in cases.items():
            self.assertEqual(parse_scheme(text, 12, self.settings).kind, kind, text)

    def test_arguments(self):
        self.assertEqual(parse_scheme("lag_thin", 12, self.settings).stride, 3)
        self.assertEqual(parse_scheme("lag_thin(5)", 12, self.settings).stride, 5)
        self.assertEqual(parse_scheme("stationary_boot(tmix)", 12, self.settings).mean_block, 12.0)
        self.assertEqual(parse_scheme("stationary_boot(2.5)", 12, self.settings).mean_block, 2.5)
        self.assertEqual(parse_scheme("circular_bb", 12, self.settings).block_len, 12)
        self.assertEqual(parse_scheme("oracle_bb(tmix)", 7, self.settings).block_len, 7)
        self.assertIsNone(parse_scheme("spectral", 12, self.settings).partitions)
        self.assertEqual(parse_scheme("spectral(4)", 12, self.settings).partitions, 4)

    def test_rejects(self):
        for text in ("bagging", "circular_bb(x)", "uniform(", ""):
            with self.assertRaises(ConfigurationError, msg=text):
                parse_scheme(text, 10, self.settings)


class TestRateCells(unittest.TestCase):
    """Seed derivation and slope summaries."""

    def setUp(self):
        self.preset = make_preset(grid={"t_mix": "2, 4", "schemes": "uniform, spectral"})
        self.settings = Settings(n=300, m=3)

    def test_seeds_pair_schemes_on_one_chain(self):
        """Schemes at the same (t_mix, seed) train on the same chain with different resampling."""
        a = rate_task(self.preset, self.settings, RateCell(2, "uniform", 0))
        b = rate_task(self.preset, self.settings, RateCell(2, "spectral", 0))
        c = rate_task(self.preset, self.settings, RateCell(2, "uniform", 1))
        d = rate_task(self.preset, self.settings, RateCell(4, "uniform", 0))
        self.assertEqual(a.config.seed, b.config.seed)
        self.assertNotEqual(a.scheme.seed, b.scheme.seed)
        self.assertNotEqual(a.config.seed, c.config.seed)
        self.assertNotEqual(a.config.seed, d.config.seed)
        self.assertEqual(a.eval_seed, c.eval_seed)
        self.assertEqual(a, rate_task(self.preset, self.settings, RateCell(2, "uniform", 0)))

    def test_model_path_only_for_first_seed(self):
        model_dir = Path("models")
        self.assertTrue(rate_task(self.preset, self.settings, RateCell(2, "circular_bb(tmix)", 0), model_dir)
                        .model_path.endswith("circular_bb_tmix_tmix2.sprt"))
        self.assertIsNone(rate_task(self.preset, self.settings, RateCell(2, "uniform", 1), model_dir).model_path)

    def test_rate_slopes(self):
        aggregate = pd.DataFrame({
            "scheme": ["a"] * 3 + ["b"] * 3 + ["c"] * 2,
            "t_mix": [1, 10, 100, 1, 10, 100, 1, 10],
            "excess_risk_mean": [0.01, 0.1, 1.0, -0.01, 0.02, 0.04, 0.1, 0.2],
        })
        with self.assertLogs("specroute.presets", level="WARNING"):
            slopes = rate_slopes(aggregate).set_index("scheme")
        self.assertAlmostEqual(slopes.loc["a", "slope"], 1.0)
        self.assertTrue(np.isfinite(slopes.loc["b", "slope"]))
        self.assertTrue(np.isnan(slopes.loc["c", "slope"]))
        self.assertGreater(RISK_FLOOR, 0)


class TestTheoryRunner(unittest.TestCase):
    """The theory runner end to end, without the harness."""

    def test_stages(self):
        preset = make_preset("theory", grid={"ns": "2, 8, 1000", "t_mix": "1, 2", "d0": "1"})
        stages = list(RUNNERS["theory"](preset, Settings()))
        self.assertEqual([s.name for s in stages], ["kl_grid", "fano_grid", "bracketing"])
        kl = stages[0].frame
        self.assertEqual(len(kl), 6)
        bracket = stages[2].frame.iloc[0]
        self.assertLess(bracket["max_dense_rel_error"], 1e-10)
        self.assertGreaterEqual(bracket["scaled_min"], 0.5)
        row = theory_row(preset, 8, 2.0)
        match = kl[(kl["n"] == 8) & (kl["t_mix"] == 2.0)].iloc[0]
        self.assertAlmostEqual(row["value"], match["value"], places=12)


if __name__ == "__main__":
    unittest.main()
