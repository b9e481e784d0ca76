"""
Experiment presets.

A preset is a flat INI file under ``presets/`` with three sections:
``[preset]`` (runner and description), ``[settings]`` (overrides of
:class:`src.config.Settings`) and ``[grid]`` (the cell grid: mixing times,
scheme expressions, chain parameters). Each runner is a generator that
yields result stages; the harness stamps and writes them.
"""

import os
import re
import math
import time
import logging
import configparser
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from src.chain_sim import ChainConfig, Topology, bayes_risk_oracle, generate
from src.config import Settings
from src.ensemble import BaseLearnerSpec
from src.errors import ConfigurationError, UnknownPresetError
from src.metrics import (
    SeedTask,
    loglog_slope,
    pairwise_margin_cov,
    rate_slope,
    run_seed,
    summarize,
)
from src.performance import cached, parallel_map
from src.replay_lfa import ReplayConfig, ensemble_weight_variance, replay_frame, replay_seed
from src.resampling import ResamplingScheme, SchemeKind, gap_graph
from src.seeding import content_hash, derive_seed
from src.spectral import effective_rank, fiedler_pair, nystrom_fiedler
from src.theory_oracle import (
    KlSpec,
    fano_grid_frame,
    kl_trajectory_closed,
    lecam_separation,
    theory_grid_frame,
)

logger = logging.getLogger("specroute.presets")

PRESET_DIR = Path(os.getenv("SPECROUTE_PRESET_DIR", Path(__file__).resolve().parent.parent / "presets"))

# Excess risk can dip below zero at fast mixing; slopes are fitted above this floor
RISK_FLOOR = 1e-4

# Settings that never change a result row
OPERATIONAL_KEYS = ("threads", "out_dir", "log_level")

_SCHEME_PATTERN = re.compile(r"^(?P<kind>[a-z_]+)(?:\((?P<arg>[^)]*)\))?$")


@dataclass(frozen=True, eq=False)
class ExperimentPreset:
    """One preset file: runner name, settings overrides and the cell grid."""

    name: str
    runner: str
    description: str
    settings: Dict[str, str]
    grid: Dict[str, str]

    def value(self, key: str, cast: Callable[[str], Any] = str, default: Any = None) -> Any:
        raw = self.grid.get(key)
        if raw is None or raw.strip() == "":
            if default is None:
                raise ConfigurationError(f"Preset {self.name} is missing grid key {key!r}")
            return default
        try:
            return cast(raw.strip())
        except ValueError as e:
            raise ConfigurationError(f"Preset {self.name}: {key}={raw!r} is invalid: {str(e)}")

    def values(self, key: str, cast: Callable[[str], Any] = str, default: Optional[Sequence[Any]] = None) -> List[Any]:
        raw = self.grid.get(key)
        if raw is None:
            if default is None:
                raise ConfigurationError(f"Preset {self.name} is missing grid key {key!r}")
            return list(default)
        try:
            return [cast(item.strip()) for item in raw.split(",") if item.strip()]
        except ValueError as e:
            raise ConfigurationError(f"Preset {self.name}: {key}={raw!r} is invalid: {str(e)}")

    def flag(self, key: str) -> bool:
        return self.grid.get(key, "false").strip().lower() in ("1", "true", "yes", "on")

    def apply(self, settings: Settings) -> Settings:
        """Settings with this preset's ``[settings]`` section applied on top."""
        return settings.with_overrides(**self.settings)

    def resolved(self, settings: Settings) -> Dict[str, Any]:
        return {"preset": self.name, "runner": self.runner, "grid": dict(sorted(self.grid.items())),
                "settings": settings.resolved()}

    def config_hash(self, settings: Settings) -> str:
        """Hash of everything that can change a result; worker count, output
        directory and log level are left out."""
        resolved = self.resolved(settings)
        resolved["settings"] = {k: v for k, v in resolved["settings"].items() if k not in OPERATIONAL_KEYS}
        return content_hash(resolved)


class Stage(NamedTuple):
    """A finished result table; ``summary`` stages are also printed."""

    name: str
    frame: pd.DataFrame
    summary: bool = False


def available_presets(preset_dir: Optional[Path] = None) -> List[str]:
    directory = Path(preset_dir or PRESET_DIR)
    if not directory.is_dir():
        return []
    return sorted(p.stem for p in directory.glob("*.ini"))


def load_preset(name: str, preset_dir: Optional[Path] = None) -> ExperimentPreset:
    """Read ``<preset_dir>/<name>.ini``.

    Raises:
        UnknownPresetError: no such file
        ConfigurationError: malformed file or unknown runner
    """
    directory = Path(preset_dir or PRESET_DIR)
    path = directory / f"{name}.ini"
    if not path.is_file():
        raise UnknownPresetError(name, available_presets(directory))

    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigurationError(f"Cannot parse preset {path}: {str(e)}")
    if not parser.has_section("preset") or not parser.has_option("preset", "runner"):
        raise ConfigurationError(f"Preset {path} needs a [preset] section with a runner")

    runner = parser.get("preset", "runner")
    if runner not in RUNNERS:
        raise ConfigurationError(f"Preset {name}: unknown runner {runner!r} (known: {sorted(RUNNERS)})")
    return ExperimentPreset(
        name=name,
        runner=runner,
        description=parser.get("preset", "description", fallback=""),
        settings=dict(parser.items("settings")) if parser.has_section("settings") else {},
        grid=dict(parser.items("grid")) if parser.has_section("grid") else {},
    )


def parse_scheme(text: str, t_mix: int, settings: Settings) -> ResamplingScheme:
    """Scheme expression -> ResamplingScheme.

    Expressions: ``uniform``, ``lag_thin[(stride)]``, ``tmix_thin``,
    ``stationary_boot(b)``, ``circular_bb(b)``, ``oracle_bb(b)``, ``auto_bb``,
    ``spectral[(P)]``. A block argument of ``tmix`` (or none) means the
    cell's mixing time.
    """
    match = _SCHEME_PATTERN.match(text.strip().lower())
    if match is None:
        raise ConfigurationError(f"Cannot parse scheme expression {text!r}")
    kind, arg = match["kind"], match["arg"]

    def number(default: Optional[float]) -> float:
        if arg is None or arg.strip() == "":
            return default
        if arg.strip() == "tmix":
            return float(t_mix)
        try:
            return float(arg)
        except ValueError:
            raise ConfigurationError(f"Scheme {text!r}: argument {arg!r} is not a number")

    if kind == "uniform":
        return ResamplingScheme.uniform()
    if kind == "lag_thin":
        return ResamplingScheme.lag_thin(int(number(settings.lag_stride)))
    if kind == "tmix_thin":
        return ResamplingScheme.tmix_thin()
    if kind == "stationary_boot":
        return ResamplingScheme.stationary_boot(number(t_mix))
    if kind == "circular_bb":
        return ResamplingScheme.circular_bb(int(number(t_mix)))
    if kind == "oracle_bb":
        return ResamplingScheme.oracle_bb(int(number(t_mix)))
    if kind == "auto_bb":
        return ResamplingScheme.auto_bb()
    if kind == "spectral":
        partitions = number(None)
        return ResamplingScheme.spectral_route(partitions=None if partitions is None else int(partitions))
    raise ConfigurationError(f"Unknown scheme kind {kind!r} in {text!r}")


def chain_config(preset: ExperimentPreset, settings: Settings, t_mix: int, n: Optional[int] = None) -> ChainConfig:
    return ChainConfig(
        t_mix=int(t_mix),
        d0=preset.value("d0", int, 2),
        n=int(n or settings.n),
        delta=preset.value("delta", float, 0.0),
        eta_std=preset.value("eta_std", float, 0.5),
        topology=Topology.from_tag(preset.value("topology", str, "path1d")),
    ).validate()


def learner_spec(preset: ExperimentPreset, settings: Settings) -> BaseLearnerSpec:
    kind = preset.value("learner", str, "axis_tree")
    if kind == "axis_tree":
        return BaseLearnerSpec.axis_tree(settings.max_depth, settings.min_leaf).validate()
    if kind == "linear_ridge":
        return BaseLearnerSpec.linear_ridge(settings.ridge).validate()
    raise ConfigurationError(f"Preset {preset.name}: unknown learner {kind!r}")


@cached
def _bayes_risk(config: ChainConfig, mc_draws: int, seed: int):
    return bayes_risk_oracle(config, mc_draws, seed)


RUNNERS: Dict[str, Callable[..., Iterator[Stage]]] = {}


def runner(name: str):
    def register(func):
        RUNNERS[name] = func
        return func
    return register


# Rates: excess risk per (t_mix, scheme, seed)

class RateCell(NamedTuple):
    t_mix: int
    scheme: str
    seed_index: int


def rate_task(preset: ExperimentPreset, settings: Settings, cell: RateCell,
              model_dir: Optional[Path] = None) -> SeedTask:
    """Seed task for one cell; every seed is derived from (master seed, preset, cell)."""
    master = settings.master_seed
    config = replace(chain_config(preset, settings, cell.t_mix),
                     seed=derive_seed(master, preset.name, "chain", cell.t_mix, cell.seed_index))
    scheme = replace(parse_scheme(cell.scheme, cell.t_mix, settings),
                     seed=derive_seed(master, preset.name, "resample", cell.t_mix, cell.scheme, cell.seed_index))
    model_path = None
    if model_dir is not None and cell.seed_index == 0:
        label = re.sub(r"[^a-z0-9]+", "_", cell.scheme.lower()).strip("_")
        model_path = str(model_dir / f"{label}_tmix{cell.t_mix}.sprt")
    return SeedTask(
        config=config, scheme=scheme, spec=learner_spec(preset, settings), m=settings.m,
        eval_n=settings.eval_n, eval_seed=derive_seed(master, preset.name, "eval", cell.t_mix),
        seed_index=cell.seed_index, c=settings.c, knn_k=settings.knn_k, tau=settings.tau,
        eig_tol=settings.eig_tol, model_path=model_path,
    )


def rate_row(preset: ExperimentPreset, settings: Settings, cell: RateCell,
             model_dir: Optional[Path] = None) -> Dict[str, Any]:
    """Train and score one cell; the row is a pure function of its arguments."""
    task = rate_task(preset, settings, cell, model_dir)
    bayes = _bayes_risk(replace(task.config, seed=0), settings.mc_draws,
                        derive_seed(settings.master_seed, preset.name, "bayes", cell.t_mix))
    outcome = run_seed(task)
    return {
        "t_mix": cell.t_mix,
        "scheme": cell.scheme,
        "seed": cell.seed_index,
        "scheme_tag": outcome.scheme_tag,
        "p_hat": float("nan") if outcome.p_hat is None else float(outcome.p_hat),
        "mean_subsample_size": outcome.mean_subsample_size,
        "ensemble_error": outcome.ensemble_error,
        "bayes_risk": bayes.value,
        "excess_risk": outcome.ensemble_error - bayes.value,
        "mean_learner_margin": float(np.mean(outcome.learner_margins)),
    }


def _rate_cell(args) -> Dict[str, Any]:
    preset, settings, cell, model_dir = args
    row = rate_row(preset, settings, cell, model_dir)
    logger.info(f"[{preset.name}] t_mix={cell.t_mix} {cell.scheme} seed={cell.seed_index}: "
                f"excess risk {row['excess_risk']:.4f}")
    return row


def rate_slopes(aggregate: pd.DataFrame) -> pd.DataFrame:
    """Log-log slope of mean excess risk against t_mix per scheme (three or more t_mix values)."""
    rows = []
    for scheme, group in aggregate.groupby("scheme", sort=True):
        points = [(t, max(r, RISK_FLOOR)) for t, r in zip(group["t_mix"], group["excess_risk_mean"])]
        if any(r <= RISK_FLOOR for _, r in points):
            logger.warning(f"Scheme {scheme}: excess risk at or below {RISK_FLOOR}; clipped for the slope fit")
        slope = rate_slope(points) if len(points) >= 3 else float("nan")
        rows.append({"scheme": scheme, "slope": slope, "points": len(points)})
    return pd.DataFrame(rows, columns=["scheme", "slope", "points"])


@runner("rates")
def run_rates(preset: ExperimentPreset, settings: Settings, out_dir: Optional[Path] = None) -> Iterator[Stage]:
    t_mixes = preset.values("t_mix", int)
    schemes = preset.values("schemes")
    model_dir = None
    if preset.flag("save_models") and out_dir is not None:
        model_dir = out_dir / "models"
        model_dir.mkdir(parents=True, exist_ok=True)

    cells = [RateCell(t, s, k) for t in t_mixes for s in schemes for k in range(settings.seeds)]
    logger.info(f"[{preset.name}] {len(cells)} cells on {settings.threads} worker(s)")
    rows = parallel_map(_rate_cell, [(preset, settings, cell, model_dir) for cell in cells],
                        max_workers=settings.threads)
    per_seed = pd.DataFrame(rows).sort_values(["t_mix", "scheme", "seed"], kind="stable").reset_index(drop=True)
    yield Stage("per_seed", per_seed)

    aggregate = summarize(per_seed, ["scheme", "t_mix"],
                          ["excess_risk", "ensemble_error", "p_hat", "mean_subsample_size"])
    yield Stage("aggregate", aggregate, summary=True)
    if len(t_mixes) >= 3:
        yield Stage("slopes", rate_slopes(aggregate), summary=True)


# Covariance mechanism

def covariance_row(preset: ExperimentPreset, settings: Settings, t_mix: int, scheme: str,
                   conditional: bool) -> Dict[str, Any]:
    """Pairwise learner-margin covariance for one (t_mix, scheme, mode) cell."""
    estimate = pairwise_margin_cov(
        chain_config(preset, settings, t_mix), parse_scheme(scheme, t_mix, settings),
        learner_spec(preset, settings), settings.seeds, m=settings.m, eval_n=settings.eval_n,
        master_seed=derive_seed(settings.master_seed, preset.name, t_mix),
        conditional=conditional, threads=settings.threads,
        c=settings.c, knn_k=settings.knn_k, tau=settings.tau, eig_tol=settings.eig_tol,
    )
    theory = t_mix ** 2 / settings.n
    row = {
        "t_mix": t_mix,
        "scheme": scheme,
        "mode": "conditional" if conditional else "joint",
        "pairwise_cov": estimate.value,
        "pairwise_cov_se": estimate.se,
        "theory": theory,
        "ratio_to_theory": estimate.value / theory,
    }
    if estimate.value > 0:
        bound = lecam_separation(settings.n, t_mix, estimate.value, settings.c0)
        row.update(lecam_delta=bound.delta, lecam_kl=bound.kl, lecam_floor=bound.risk_floor)
    return row


@runner("covariance")
def run_covariance(preset: ExperimentPreset, settings: Settings, out_dir: Optional[Path] = None) -> Iterator[Stage]:
    modes = [False, True] if preset.flag("conditional") else [False]
    rows = [covariance_row(preset, settings, t_mix, text, conditional)
            for t_mix in preset.values("t_mix", int)
            for text in preset.values("schemes")
            for conditional in modes]
    frame = pd.DataFrame(rows)
    yield Stage("covariance", frame, summary=True)

    slopes = []
    for (scheme, mode), group in frame.groupby(["scheme", "mode"], sort=True):
        usable = group[(group["t_mix"] > 1) & (group["pairwise_cov"] > 0)]
        slope = loglog_slope(usable["t_mix"], usable["pairwise_cov"]) if len(usable) >= 2 else float("nan")
        slopes.append({"scheme": scheme, "mode": mode, "slope": slope, "points": len(usable)})
    yield Stage("slopes", pd.DataFrame(slopes), summary=True)


# Spectral diagnostics

def _witness_graph(preset: ExperimentPreset, settings: Settings, t_mix: int, n: int, seed: int):
    config = replace(chain_config(preset, settings, t_mix, n), seed=seed)
    return gap_graph(generate(config), settings.knn_k, settings.tau, feature_only=preset.flag("feature_only"))


def effective_rank_row(preset: ExperimentPreset, settings: Settings, n: int, seed_index: int) -> Dict[str, Any]:
    t_mix = preset.value("t_mix", int)
    top_k = preset.value("top_k", int, 50)
    g = _witness_graph(preset, settings, t_mix, n, derive_seed(settings.master_seed, preset.name, n, seed_index))
    return {"n": n, "seed": seed_index, "t_mix": t_mix, "top_k": top_k, "r_eff": effective_rank(g, top_k)}


@runner("effective_rank")
def run_effective_rank(preset: ExperimentPreset, settings: Settings, out_dir: Optional[Path] = None) -> Iterator[Stage]:
    rows = []
    for n in preset.values("ns", int):
        for s in range(settings.seeds):
            rows.append(effective_rank_row(preset, settings, n, s))
            logger.info(f"[{preset.name}] n={n} seed={s}: r_eff={rows[-1]['r_eff']:.3f}")
    per_seed = pd.DataFrame(rows)
    yield Stage("per_seed", per_seed)

    aggregate = summarize(per_seed, ["n"], ["r_eff"])
    aggregate["relative_increase"] = aggregate["r_eff_mean"].pct_change()
    yield Stage("aggregate", aggregate, summary=True)


def nystrom_row(preset: ExperimentPreset, settings: Settings, n: int, seed_index: int) -> Dict[str, Any]:
    """Exact and l = t_mix log^2 n landmark gap on one witness chain, with wall times."""
    t_mix = preset.value("t_mix", int)
    landmarks = min(math.ceil(t_mix * math.log(n) ** 2), n)
    seed = derive_seed(settings.master_seed, preset.name, n, seed_index)
    g = _witness_graph(preset, settings, t_mix, n, seed)
    start = time.perf_counter()
    exact = fiedler_pair(g, tol=settings.eig_tol, max_iter=settings.eig_max_iter).lambda2
    t_exact = time.perf_counter() - start
    start = time.perf_counter()
    approx = nystrom_fiedler(g, landmarks, seed)[0]
    t_nystrom = time.perf_counter() - start
    return {
        "n": n, "seed": seed_index, "landmarks": landmarks,
        "lambda2_exact": exact, "lambda2_nystrom": approx,
        "abs_error": abs(approx - exact),
        "seconds_exact": t_exact, "seconds_nystrom": t_nystrom,
        "speedup": t_exact / t_nystrom if t_nystrom > 0 else float("nan"),
    }


@runner("nystrom")
def run_nystrom(preset: ExperimentPreset, settings: Settings, out_dir: Optional[Path] = None) -> Iterator[Stage]:
    rows = []
    for n in preset.values("ns", int):
        for s in range(settings.seeds):
            rows.append(nystrom_row(preset, settings, n, s))
            logger.info(f"[{preset.name}] n={n} seed={s}: exact {rows[-1]['seconds_exact']:.2f}s, "
                        f"Nystrom {rows[-1]['seconds_nystrom']:.2f}s")
    per_seed = pd.DataFrame(rows)
    yield Stage("per_seed", per_seed)
    yield Stage("aggregate", summarize(per_seed, ["n"], ["lambda2_exact", "lambda2_nystrom", "abs_error",
                                                            "seconds_exact", "seconds_nystrom"]), summary=True)


def concentration_reference(preset: ExperimentPreset, settings: Settings) -> float:
    """Gap of the reference chain, reference_factor * max(ns) long."""
    n_ref = preset.value("reference_factor", int, 4) * max(preset.values("ns", int))
    ref_graph = _witness_graph(preset, settings, preset.value("t_mix", int), n_ref,
                               derive_seed(settings.master_seed, preset.name, "ref"))
    reference = fiedler_pair(ref_graph, tol=settings.eig_tol, max_iter=settings.eig_max_iter).lambda2
    logger.info(f"[{preset.name}] reference lambda2 at n={n_ref}: {reference:.6e}")
    return reference


def concentration_row(preset: ExperimentPreset, settings: Settings, n: int, seed_index: int,
                      reference: float) -> Dict[str, Any]:
    g = _witness_graph(preset, settings, preset.value("t_mix", int), n,
                       derive_seed(settings.master_seed, preset.name, n, seed_index))
    value = fiedler_pair(g, tol=settings.eig_tol, max_iter=settings.eig_max_iter).lambda2
    return {"n": n, "seed": seed_index, "lambda2": value, "reference": reference,
            "abs_error": abs(value - reference)}


@runner("concentration")
def run_concentration(preset: ExperimentPreset, settings: Settings, out_dir: Optional[Path] = None) -> Iterator[Stage]:
    """|lambda2(n) - lambda2(reference)| against n; the reference chain is factor * max(n) long."""
    t_mix = preset.value("t_mix", int)
    reference = concentration_reference(preset, settings)
    rows = [concentration_row(preset, settings, n, s, reference)
            for n in preset.values("ns", int) for s in range(settings.seeds)]
    per_seed = pd.DataFrame(rows)
    yield Stage("per_seed", per_seed)

    aggregate = summarize(per_seed, ["n"], ["lambda2", "abs_error"])
    slope = loglog_slope(aggregate["n"], aggregate["abs_error_mean"])
    yield Stage("aggregate", aggregate, summary=True)
    yield Stage("slopes", pd.DataFrame([{"t_mix": t_mix, "slope": slope, "points": len(aggregate)}]), summary=True)


# Replay

def replay_config(preset: ExperimentPreset, settings: Settings, t_mix: int) -> ReplayConfig:
    return ReplayConfig(
        n_buffer=settings.n, t_mix=t_mix, state_dim=preset.value("state_dim", int, 2),
        n_actions=preset.value("n_actions", int, 2), gamma_discount=preset.value("gamma_discount", float, 0.9),
        m=settings.m, seed=derive_seed(settings.master_seed, preset.name, "w_old"),
        knn_k=settings.knn_k, c=settings.c,
    ).validate()


def replay_row(preset: ExperimentPreset, settings: Settings, scheme: str, t_mix: int,
               seed_index: int) -> Dict[str, Any]:
    """Per-batch target variance of one buffer; ``var_wbar`` needs every seed and is not rebuilt."""
    result = replay_seed(replay_config(preset, settings, t_mix), SchemeKind(scheme), seed_index,
                         derive_seed(settings.master_seed, preset.name, t_mix))
    return {"scheme": scheme, "t_mix": t_mix, "seed": seed_index, "target_var": result.batch_target_var}


@runner("replay")
def run_replay(preset: ExperimentPreset, settings: Settings, out_dir: Optional[Path] = None) -> Iterator[Stage]:
    frames, rows = [], []
    for t_mix in preset.values("t_mix", int):
        cfg = replay_config(preset, settings, t_mix)
        master = derive_seed(settings.master_seed, preset.name, t_mix)
        for kind in (SchemeKind.UNIFORM, SchemeKind.SPECTRAL_ROUTE):
            result = ensemble_weight_variance(cfg, kind, settings.seeds, master, settings.threads)
            frames.append(replay_frame(kind, t_mix, result))
            rows.append({
                "scheme": kind.value, "t_mix": t_mix, "var_wbar": result.var_wbar,
                "var_wbar_se": result.var_wbar_se, "target_var": result.target_var,
                "target_var_drop": result.target_var_drop,
            })
    yield Stage("per_seed", pd.concat(frames, ignore_index=True))
    yield Stage("aggregate", pd.DataFrame(rows), summary=True)


# Theory

@runner("theory")
def run_theory(preset: ExperimentPreset, settings: Settings, out_dir: Optional[Path] = None) -> Iterator[Stage]:
    ns = preset.values("ns", int)
    t_mixes = preset.values("t_mix", float)
    d0 = preset.value("d0", int, 1)
    kl = theory_grid_frame(ns, t_mixes, d0=d0, norm=preset.value("norm", float, 1.0),
                           drift_nu=preset.value("drift_nu", float, 0.0))
    yield Stage("kl_grid", kl)
    fano = fano_grid_frame(ns, t_mixes, preset.value("fano_d0", int, 64), settings.c1, settings.c2)
    yield Stage("fano_grid", fano)

    bracket = kl[kl["n"] >= 100 * kl["t_mix"]]
    yield Stage("bracketing", pd.DataFrame([{
        "rows": len(bracket),
        "scaled_min": bracket["scaled"].min() if len(bracket) else float("nan"),
        "scaled_max": bracket["scaled"].max() if len(bracket) else float("nan"),
        "max_dense_rel_error": float(np.nanmax(np.abs(kl["value"] - kl["dense_value"]) / kl["value"]))
        if kl["dense_value"].notna().any() else float("nan"),
    }]), summary=True)


def theory_row(preset: ExperimentPreset, n: int, t_mix: float) -> Dict[str, Any]:
    """Recompute one KL grid row."""
    spec = KlSpec.for_tmix(n, t_mix, preset.value("d0", int, 1), preset.value("norm", float, 1.0))
    return {"n": n, "t_mix": t_mix, "value": kl_trajectory_closed(spec, preset.value("drift_nu", float, 0.0))}


# Row-level re-derivation for ``verify``

class RowCheck(NamedTuple):
    """How one written row of a runner is rebuilt from its key columns."""

    stage_file: str
    keys: Sequence[str]
    compared: Sequence[str]
    rebuild: Callable[[ExperimentPreset, Settings, pd.Series], Dict[str, Any]]


ROW_CHECKS: Dict[str, RowCheck] = {
    "rates": RowCheck(
        "per_seed.csv", ("t_mix", "scheme", "seed"),
        ("scheme_tag", "p_hat", "mean_subsample_size", "ensemble_error", "excess_risk", "mean_learner_margin"),
        lambda p, s, r: rate_row(p, s, RateCell(int(r["t_mix"]), str(r["scheme"]), int(r["seed"]))),
    ),
    "covariance": RowCheck(
        "covariance.csv", ("t_mix", "scheme", "mode"), ("pairwise_cov", "pairwise_cov_se"),
        lambda p, s, r: covariance_row(p, s, int(r["t_mix"]), str(r["scheme"]), str(r["mode"]) == "conditional"),
    ),
    "effective_rank": RowCheck(
        "per_seed.csv", ("n", "seed"), ("r_eff",),
        lambda p, s, r: effective_rank_row(p, s, int(r["n"]), int(r["seed"])),
    ),
    "nystrom": RowCheck(
        "per_seed.csv", ("n", "seed"), ("landmarks", "lambda2_exact", "lambda2_nystrom", "abs_error"),
        lambda p, s, r: nystrom_row(p, s, int(r["n"]), int(r["seed"])),
    ),
    "concentration": RowCheck(
        "per_seed.csv", ("n", "seed"), ("lambda2", "reference", "abs_error"),
        lambda p, s, r: concentration_row(p, s, int(r["n"]), int(r["seed"]), concentration_reference(p, s)),
    ),
    "replay": RowCheck(
        "per_seed.csv", ("scheme", "t_mix", "seed"), ("target_var",),
        lambda p, s, r: replay_row(p, s, str(r["scheme"]), int(r["t_mix"]), int(r["seed"])),
    ),
    "theory": RowCheck(
        "kl_grid.csv", ("n", "t_mix"), ("value",),
        lambda p, s, r: theory_row(p, int(r["n"]), float(r["t_mix"])),
    ),
}
