"""
Configuration for SpecRoute.

Settings are resolved from built-in defaults, an optional INI file
(section ``[specroute]``), environment variables prefixed ``SPECROUTE_``
and finally explicit overrides (CLI flags), in that order.
"""

import os
import configparser
import logging
from dataclasses import dataclass, fields, asdict, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

from src.errors import ConfigurationError

logger = logging.getLogger("specroute.config")

# Environment and file conventions
ENV_PREFIX = "SPECROUTE_"
CONFIG_SECTION = "specroute"
DEFAULT_CONFIG_PATH = Path(os.getenv("SPECROUTE_CONFIG", "specroute.ini"))


@dataclass(frozen=True)
class Settings:
    """Every tunable key of the library and harness."""

    n: int = 20000
    m: int = 50
    seeds: int = 10
    threads: int = 1
    out_dir: str = "results"
    master_seed: int = 20240601
    # spectral routing
    c: float = 1.0
    tau: int = 1
    knn_k: int = 10
    eig_tol: float = 1e-8
    eig_max_iter: int = 5000
    # resampling
    lag_stride: int = 2
    # base learners
    max_depth: int = 8
    min_leaf: int = 5
    ridge: float = 1.0
    # evaluation
    mc_draws: int = 200000
    eval_n: int = 20000
    # theory constants
    c0: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    log_level: str = "INFO"

    def resolved(self) -> Dict[str, Any]:
        """Return the flat key/value view that is hashed into output rows."""
        return asdict(self)

    def with_overrides(self, **overrides: Any) -> "Settings":
        """Return a copy with non-None overrides applied."""
        clean = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(clean) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigurationError(f"Unknown setting(s): {sorted(unknown)}")
        return replace(self, **{k: _coerce(k, v) for k, v in clean.items()})


def _coerce(key: str, value: Any) -> Any:
    """Coerce a raw string/number to the declared type of ``key``."""
    kind = {f.name: f.type for f in fields(Settings)}[key]
    try:
        if kind is int and isinstance(value, str) and not value.strip().lstrip("-").isdigit():
            # accept "2e4" style integers from INI files
            return int(float(value))
        return kind(value)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Setting {key}={value!r} is not a valid {kind.__name__}: {str(e)}")


def _read_ini(path: Path) -> Dict[str, str]:
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigurationError(f"Cannot parse config file {path}: {str(e)}")
    if not parser.has_section(CONFIG_SECTION):
        return {}
    return dict(parser.items(CONFIG_SECTION))


def _read_env() -> Dict[str, str]:
    values = {}
    for f in fields(Settings):
        raw = os.getenv(ENV_PREFIX + f.name.upper())
        if raw is not None:
            values[f.name] = raw
    return values


def load_settings(path: Optional[Union[str, Path]] = None, **overrides: Any) -> Settings:
    """Load settings from defaults, INI file, environment and overrides.

    Args:
        path: INI file to read (defaults to ``specroute.ini`` if it exists)
        **overrides: Highest-priority values, typically CLI flags

    Returns:
        Resolved Settings
    """
    settings = Settings()
    ini_path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if ini_path.exists():
        settings = settings.with_overrides(**_read_ini(ini_path))
        logger.debug(f"Loaded settings from {ini_path}")
    elif path is not None:
        raise ConfigurationError(f"Config file {ini_path} does not exist")

    env_values = _read_env()
    if env_values:
        logger.debug(f"Environment overrides: {sorted(env_values)}")
        settings = settings.with_overrides(**env_values)

    return settings.with_overrides(**overrides)


def save_setting(path: Union[str, Path], key: str, value: Any) -> None:
    """Persist a single key into the INI config store.

    Args:
        path: INI file (created if missing)
        key: Setting name
        value: Value to store
    """
    if key not in {f.name for f in fields(Settings)}:
        raise ConfigurationError(f"Unknown setting: {key}")
    path = Path(path)
    parser = configparser.ConfigParser()
    if path.exists():
        parser.read(path)
    if not parser.has_section(CONFIG_SECTION):
        parser.add_section(CONFIG_SECTION)
    parser.set(CONFIG_SECTION, key, repr(value) if isinstance(value, float) else str(value))
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "w") as f:
        parser.write(f)
    os.replace(tmp_path, path)
    logger.info(f"Saved {key}={value} to {path}")
