#!/usr/bin/env python3
"""
Command-line harness for SpecRoute.

Usage:
    python -m src.harness list
    python -m src.harness run PRESET [--seeds N] [--n N] [--m M] [--threads T] [--out-dir DIR]
    python -m src.harness verify PRESET [--row I]
    python -m src.harness calibrate --t-mix T [--d0 D]
    python -m src.harness predict --model MODEL --features FEATURES.csv --out MARGINS.csv

Exit status: 0 success, 1 preset failure or verify mismatch, 2 usage error
or unknown preset.
"""

import os
import sys
import time
import argparse
import logging
import statistics
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src import storage
from src.chain_sim import ChainConfig, generate
from src.config import DEFAULT_CONFIG_PATH, Settings, load_settings, save_setting
from src.ensemble import load_model, predict_frame
from src.errors import ConfigurationError, SpecRouteError, UnknownPresetError
from src.presets import ROW_CHECKS, RUNNERS, ExperimentPreset, available_presets, load_preset
from src.resampling import gap_graph
from src.seeding import canonical_json, derive_seed, stream
from src.spectral import fiedler_pair

logger = logging.getLogger("specroute.harness")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

PARTIAL_MARKER = "PARTIAL"
RESOLVED_CONFIG = "resolved_config.json"


def stamp(frame: pd.DataFrame, preset_name: str, config_hash: str) -> pd.DataFrame:
    """Prefix every row with the preset name and the resolved-config hash."""
    stamped = frame.copy()
    stamped.insert(0, "config_hash", config_hash)
    stamped.insert(0, "preset", preset_name)
    return stamped


def _resolve(name: str, overrides: Optional[Dict[str, Any]], config_path: Optional[str],
             preset_dir: Optional[Path]):
    preset = load_preset(name, preset_dir)
    settings = preset.apply(load_settings(config_path)).with_overrides(**(overrides or {}))
    return preset, settings


def _write_marker(marker: Path, preset: ExperimentPreset, config_hash: str, error: Exception,
                  written: Sequence[Path]) -> None:
    storage.write_bytes(marker, canonical_json({
        "preset": preset.name,
        "config_hash": config_hash,
        "error_type": type(error).__name__,
        "error": str(error),
        "written": [p.name for p in written],
    }).encode("utf-8"))


def run_preset(name: str, overrides: Optional[Dict[str, Any]] = None, config_path: Optional[str] = None,
               preset_dir: Optional[Path] = None) -> int:
    """Run a preset and write its CSV stages under ``<out_dir>/<preset>/``.

    Args:
        name: Preset name (file stem under presets/)
        overrides: CLI-level settings overrides (highest priority)
        config_path: INI settings file
        preset_dir: Directory holding the preset files

    Returns:
        Exit status
    """
    try:
        preset, settings = _resolve(name, overrides, config_path, preset_dir)
    except UnknownPresetError as e:
        logger.error(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as e:
        logger.error(f"Invalid configuration for preset {name}: {str(e)}")
        return EXIT_USAGE

    out_dir = Path(settings.out_dir) / preset.name
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / PARTIAL_MARKER
    config_hash = preset.config_hash(settings)
    storage.write_bytes(out_dir / RESOLVED_CONFIG, canonical_json(preset.resolved(settings)).encode("utf-8"))

    logger.info(f"Running preset {preset.name} ({preset.runner}), config {config_hash}")
    start_time = time.time()
    written: List[Path] = []
    try:
        for stage in RUNNERS[preset.runner](preset, settings, out_dir):
            written.append(storage.write_csv(stamp(stage.frame, preset.name, config_hash),
                                             out_dir / f"{stage.name}.csv"))
            if stage.summary:
                print(f"\n[{preset.name}] {stage.name}")
                print(stage.frame.to_string(index=False))
    except SpecRouteError as e:
        logger.error(f"Preset {preset.name} aborted: {str(e)}")
        _write_marker(marker, preset, config_hash, e, written)
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"Preset {preset.name} aborted by an unexpected {type(e).__name__}")
        _write_marker(marker, preset, config_hash, e, written)
        return EXIT_FAILURE

    if marker.exists():
        marker.unlink()
    logger.info("=" * 80)
    logger.info(f"Preset {preset.name} finished in {time.time() - start_time:.1f}s; "
                f"{len(written)} file(s) in {out_dir}")
    logger.info("=" * 80)
    return EXIT_OK


def verify_row(name: str, row: Optional[int] = None, overrides: Optional[Dict[str, Any]] = None,
               config_path: Optional[str] = None, preset_dir: Optional[Path] = None) -> int:
    """Re-run one written row and diff it against the stored values.

    The row is chosen by ``row`` or drawn from the master seed.
    """
    try:
        preset, settings = _resolve(name, overrides, config_path, preset_dir)
    except UnknownPresetError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as e:
        logger.error(f"Invalid configuration for preset {name}: {str(e)}")
        return EXIT_USAGE
    check = ROW_CHECKS.get(preset.runner)
    if check is None:
        logger.error(f"Preset {name} ({preset.runner}) has no row-level verification; "
                     f"supported runners: {sorted(ROW_CHECKS)}")
        return EXIT_USAGE

    path = Path(settings.out_dir) / preset.name / check.stage_file
    if not path.is_file():
        logger.error(f"No results at {path}; run the preset first")
        return EXIT_USAGE
    frame = pd.read_csv(path)

    config_hash = preset.config_hash(settings)
    stored_hashes = set(frame["config_hash"].astype(str))
    if stored_hashes != {config_hash}:
        logger.error(f"{path} was written under config {sorted(stored_hashes)}, current config is {config_hash}")
        return EXIT_FAILURE

    index = row if row is not None else int(stream(settings.master_seed, "verify").integers(len(frame)))
    if not 0 <= index < len(frame):
        logger.error(f"Row {index} out of range [0, {len(frame)})")
        return EXIT_USAGE
    record = frame.iloc[index]
    logger.info(f"Verifying {preset.name} row {index}: " + ", ".join(f"{k}={record[k]}" for k in check.keys))

    try:
        fresh = check.rebuild(preset, settings, record)
    except SpecRouteError as e:
        logger.error(f"Re-running row {index} failed: {str(e)}")
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"Re-running row {index} failed with an unexpected {type(e).__name__}")
        return EXIT_FAILURE

    mismatches = []
    for column in check.compared:
        stored, value = record[column], fresh[column]
        if isinstance(value, str):
            same = str(stored) == value
        else:
            same = bool(np.isclose(float(stored), float(value), rtol=1e-9, atol=1e-12, equal_nan=True))
        if not same:
            mismatches.append(f"{column}: stored {stored!r}, recomputed {value!r}")

    if mismatches:
        for line in mismatches:
            logger.error(f"Mismatch in {line}")
        return EXIT_FAILURE
    logger.info(f"Row {index} reproduced exactly ({len(check.compared)} columns)")
    return EXIT_OK


def _median_gap(t_mix: int, settings: Settings, d0: int, n: int, seeds: int) -> float:
    values = []
    for s in range(seeds):
        config = ChainConfig(t_mix=t_mix, d0=d0, n=n, seed=derive_seed(settings.master_seed, "calibrate", t_mix, s))
        g = gap_graph(generate(config.validate()), settings.knn_k, settings.tau)
        values.append(fiedler_pair(g, tol=settings.eig_tol, max_iter=settings.eig_max_iter).lambda2)
    return float(statistics.median(values))


def calibrate_c(t_mix_known: int, settings: Settings, config_path: Optional[str] = None, d0: int = 2,
                n: Optional[int] = None, seeds: int = 3, persist: bool = True) -> float:
    """Fit c so that ceil(c / lambda2) equals t_mix_known at the median gap.

    c = (t_mix_known - 1/2) * median lambda2 over ``seeds`` witness chains.
    The gap is also probed at half and double the mixing time; a response
    that does not decrease with t_mix is logged as a warning.

    Args:
        t_mix_known: Mixing time of the witness chain
        settings: Resolved settings (graph and solver keys, master seed)
        config_path: INI file the fitted c is written to
        d0: Witness dimension
        n: Witness length (defaults to settings.n)
        seeds: Witness chains per probe
        persist: Write c to the config store

    Returns:
        Fitted c
    """
    if t_mix_known < 1:
        raise ConfigurationError(f"t_mix must be >= 1, got {t_mix_known}")
    n = int(n or settings.n)
    gap = _median_gap(t_mix_known, settings, d0, n, seeds)
    c = (t_mix_known - 0.5) * gap

    probes = sorted({max(1, t_mix_known // 2), t_mix_known, 2 * t_mix_known})
    response = [gap if t == t_mix_known else _median_gap(t, settings, d0, n, seeds) for t in probes]
    if any(b >= a for a, b in zip(response, response[1:])):
        logger.warning(f"lambda2 is not decreasing in t_mix around {t_mix_known}: "
                       + ", ".join(f"t_mix={t}: {g:.3e}" for t, g in zip(probes, response)))

    logger.info(f"Calibrated c={c:.6g} from median lambda2={gap:.6e} at t_mix={t_mix_known}, n={n}")
    if persist:
        target = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
        save_setting(target, "c", c)
        logger.info(f"Stored c in {target}")
    return c


def predict_file(model_path: str, features_path: str, out_path: str) -> Path:
    """Score a feature CSV (columns x0..x{d-1}) and write (index, margin, prediction)."""
    model = load_model(model_path)
    frame = pd.read_csv(features_path)
    return storage.write_csv(predict_frame(model, frame), out_path)


def list_presets(preset_dir: Optional[Path] = None) -> List[ExperimentPreset]:
    return [load_preset(name, preset_dir) for name in available_presets(preset_dir)]


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    overrides = argparse.ArgumentParser(add_help=False)
    overrides.add_argument("--seeds", type=int, help="Seeds per cell")
    overrides.add_argument("--n", type=int, help="Training trajectory length")
    overrides.add_argument("--m", type=int, help="Ensemble size")
    overrides.add_argument("--threads", type=int, help="Worker processes")
    overrides.add_argument("--out-dir", help="Results directory")

    parser = argparse.ArgumentParser(description="Spectral routing experiments for ensembles on dependent data")
    parser.add_argument("--config", help="INI settings file (default: specroute.ini if present)")
    parser.add_argument("--log-level", default=os.getenv("SPECROUTE_LOG_LEVEL", "INFO"), help="Logging level")
    parser.add_argument("--preset-dir", help="Directory holding preset files")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[overrides], help="Run a preset")
    run.add_argument("preset")

    verify = commands.add_parser("verify", parents=[overrides], help="Re-run a written row and diff it")
    verify.add_argument("preset")
    verify.add_argument("--row", type=int, help="Row index (default: drawn from the master seed)")

    calibrate = commands.add_parser("calibrate", parents=[overrides], help="Fit the partition-count constant c")
    calibrate.add_argument("--t-mix", type=int, required=True, help="Known mixing time of the witness")
    calibrate.add_argument("--d0", type=int, default=2, help="Witness dimension")
    calibrate.add_argument("--calibration-seeds", type=int, default=3, help="Witness chains per probe")
    calibrate.add_argument("--dry-run", action="store_true", help="Do not write c to the config file")

    predict = commands.add_parser("predict", help="Score a feature CSV with a saved ensemble")
    predict.add_argument("--model", required=True)
    predict.add_argument("--features", required=True)
    predict.add_argument("--out", required=True)

    commands.add_parser("list", help="List available presets")
    return parser.parse_args(argv)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "seeds": getattr(args, "seeds", None),
        "n": getattr(args, "n", None),
        "m": getattr(args, "m", None),
        "threads": getattr(args, "threads", None),
        "out_dir": getattr(args, "out_dir", None),
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    preset_dir = Path(args.preset_dir) if args.preset_dir else None

    if args.command == "list":
        try:
            presets = list_presets(preset_dir)
        except ConfigurationError as e:
            logger.error(f"Cannot read presets: {str(e)}")
            return EXIT_USAGE
        for preset in presets:
            print(f"{preset.name:<24} {preset.runner:<16} {preset.description}")
        return EXIT_OK

    if args.command == "run":
        return run_preset(args.preset, _overrides(args), args.config, preset_dir)

    if args.command == "verify":
        return verify_row(args.preset, args.row, _overrides(args), args.config, preset_dir)

    try:
        if args.command == "calibrate":
            settings = load_settings(args.config, **_overrides(args))
            c = calibrate_c(args.t_mix, settings, args.config, d0=args.d0, seeds=args.calibration_seeds,
                            persist=not args.dry_run)
            print(f"c = {c!r}")
        elif args.command == "predict":
            print(predict_file(args.model, args.features, args.out))
    except ConfigurationError as e:
        logger.error(f"Configuration error: {str(e)}")
        return EXIT_USAGE
    except SpecRouteError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
