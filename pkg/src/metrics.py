"""
Ensemble measurements.

Excess risk against the Bayes risk, pairwise covariance of per-learner
margins across seeds, margin autocovariance, the truncated variance
functional, and log-log rate slopes.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.chain_sim import BayesRisk, ChainConfig, Trajectory, generate, generate_eval
from src.ensemble import BaseLearnerSpec, EnsembleModel, save_model, train
from src.errors import ArgumentError
from src.performance import parallel_map
from src.resampling import ResamplingScheme, draw_scheme
from src.seeding import derive_seed

logger = logging.getLogger("specroute.metrics")

Predictor = Union[Callable[[np.ndarray], np.ndarray], EnsembleModel]


class Estimate(NamedTuple):
    value: float
    se: float


@dataclass(frozen=True)
class MetricsReport:
    """Measured quantities for one (scheme, chain family) cell."""

    excess_risk: float
    excess_risk_se: float
    pairwise_cov: float
    pairwise_cov_se: float
    autocov: np.ndarray = field(default_factory=lambda: np.zeros(1))
    variance_functional: float = float("nan")
    n_eval: int = 0
    seeds_used: int = 0
    conditional_cov: Optional[float] = None

    def to_row(self) -> Dict[str, float]:
        row = {
            "excess_risk": self.excess_risk,
            "excess_risk_se": self.excess_risk_se,
            "pairwise_cov": self.pairwise_cov,
            "pairwise_cov_se": self.pairwise_cov_se,
            "autocov_0": float(self.autocov[0]),
            "variance_functional": self.variance_functional,
            "n_eval": self.n_eval,
            "seeds_used": self.seeds_used,
        }
        if self.conditional_cov is not None:
            row["conditional_cov"] = self.conditional_cov
        return row


def _predict(h: Predictor, x: np.ndarray) -> np.ndarray:
    if isinstance(h, EnsembleModel):
        return h.predict(x)
    return np.asarray(h(x))


def error_rate(margins: np.ndarray, y: np.ndarray) -> float:
    """Fraction of points with y * sign(margin) <= 0; a zero margin counts as an error."""
    return float(np.mean(np.sign(margins) * y <= 0))


def excess_risk(model: EnsembleModel, eval_traj: Trajectory, bayes: Union[float, BayesRisk]) -> Estimate:
    """Held-out misclassification rate minus the Bayes risk.

    Args:
        model: Trained ensemble
        eval_traj: Held-out draw from the same chain family the model was trained on
        bayes: Bayes risk (a BayesRisk also contributes its standard error)

    Returns:
        Estimate(value, se) with binomial standard error
    """
    if model.family != eval_traj.config.family_key():
        raise ArgumentError(
            f"Model was trained on {model.family} but evaluation data is from {eval_traj.config.family_key()}"
        )
    risk = error_rate(model.margins(eval_traj.x), np.asarray(eval_traj.y))
    n = eval_traj.n
    se = np.sqrt(max(risk * (1.0 - risk), 0.0) / n)
    bayes_value, bayes_se = (bayes.value, bayes.se) if isinstance(bayes, BayesRisk) else (float(bayes), 0.0)
    return Estimate(risk - bayes_value, float(np.hypot(se, bayes_se)))


@dataclass(frozen=True)
class SeedTask:
    """One training run: chain draw, resampling, training and held-out evaluation."""

    config: ChainConfig
    scheme: ResamplingScheme
    spec: BaseLearnerSpec
    m: int
    eval_n: int
    eval_seed: int
    seed_index: int = 0
    c: float = 1.0
    knn_k: int = 10
    tau: int = 1
    eig_tol: float = 1e-8
    model_path: Optional[str] = None


class SeedOutcome(NamedTuple):
    seed_index: int
    learner_margins: np.ndarray
    ensemble_error: float
    mean_subsample_size: float
    p_hat: Optional[int]
    scheme_tag: str


def run_seed(task: SeedTask) -> SeedOutcome:
    """Train an ensemble for one seed and score each learner on the evaluation set.

    The learner margin is V_j = mean over the evaluation set of y * h_j(x).
    """
    traj = generate(task.config)
    subs = draw_scheme(traj, task.scheme, task.m, c=task.c, knn_k=task.knn_k, tau=task.tau, tol=task.eig_tol)
    model = train(traj, subs, task.spec)
    if task.model_path:
        save_model(model, task.model_path)
    eval_traj = generate_eval(task.config, task.eval_n, task.eval_seed)
    votes = model.votes(eval_traj.x)
    y = np.asarray(eval_traj.y)
    plan = subs.scheme.plan
    return SeedOutcome(
        seed_index=task.seed_index,
        learner_margins=(votes * y).mean(axis=1),
        ensemble_error=error_rate(votes.mean(axis=0), y),
        mean_subsample_size=float(subs.sizes.mean()),
        p_hat=plan.p_hat if plan is not None else None,
        scheme_tag=subs.scheme.tag(),
    )


def covariance_from_margins(margins: np.ndarray) -> Estimate:
    """Mean over learner pairs of the across-seed covariance of V_j and V_l.

    Args:
        margins: (seeds, m) matrix of learner margins

    Returns:
        Estimate(value, se); the se treats seeds as independent replicates
    """
    margins = np.asarray(margins, dtype=float)
    seeds, m = margins.shape
    if seeds < 2:
        raise ArgumentError(f"Need at least 2 seeds, got {seeds}")
    if m < 2:
        raise ArgumentError(f"Need at least 2 learners, got {m}")
    dev = margins - margins.mean(axis=0)
    # per-seed average of d_j d_l over ordered pairs j != l
    z = (dev.sum(axis=1) ** 2 - (dev ** 2).sum(axis=1)) / (m * (m - 1))
    value = z.sum() / (seeds - 1)
    se = np.std(z, ddof=1) * seeds / (seeds - 1) / np.sqrt(seeds)
    return Estimate(float(value), float(se))


def seed_tasks(config: ChainConfig, scheme: ResamplingScheme, spec: BaseLearnerSpec, n_seeds: int, m: int,
               eval_n: int, master_seed: int, conditional: bool = False, **options) -> List[SeedTask]:
    """Per-seed tasks. Joint mode redraws the chain every seed; conditional mode
    keeps one chain and varies only the resampling."""
    tasks = []
    eval_seed = derive_seed(master_seed, "eval")
    for s in range(n_seeds):
        chain_seed = derive_seed(master_seed, "chain", 0 if conditional else s)
        tasks.append(SeedTask(
            config=replace(config, seed=chain_seed),
            scheme=replace(scheme, seed=derive_seed(master_seed, "resample", s)),
            spec=spec, m=m, eval_n=eval_n, eval_seed=eval_seed, seed_index=s, **options,
        ))
    return tasks


def pairwise_margin_cov(config: ChainConfig, scheme: ResamplingScheme, spec: BaseLearnerSpec, n_seeds: int,
                        m: int = 50, eval_n: int = 20000, master_seed: int = 0, conditional: bool = False,
                        threads: int = 1, **options) -> Estimate:
    """Across-seed covariance of two learners' evaluation margins, averaged over pairs.

    Args:
        config: Chain family (its seed is replaced per run)
        scheme: Resampling scheme (its seed is replaced per run)
        spec: Base learner family
        n_seeds: Number of independent runs
        m: Ensemble size
        eval_n: Evaluation set size (the same set for every seed)
        master_seed: Seed all runs derive from
        conditional: Hold the chain fixed and vary only the resampling
        threads: Worker processes
        **options: c, knn_k, tau, eig_tol passed to each run

    Returns:
        Estimate(value, se)
    """
    if n_seeds < 2:
        raise ArgumentError(f"n_seeds must be >= 2, got {n_seeds}")
    if n_seeds < 20:
        logger.warning(f"Covariance from {n_seeds} seeds is noisy; 20 or more recommended")
    tasks = seed_tasks(config, scheme, spec, n_seeds, m, eval_n, master_seed, conditional, **options)
    outcomes = sorted(parallel_map(run_seed, tasks, max_workers=threads), key=lambda o: o.seed_index)
    estimate = covariance_from_margins(np.vstack([o.learner_margins for o in outcomes]))
    mode = "chain-conditional" if conditional else "joint"
    logger.info(f"Pairwise margin covariance ({mode}, {scheme.kind.value}, t_mix={config.t_mix}): "
                f"{estimate.value:.3e} +/- {estimate.se:.1e}")
    return estimate


def _lag_products(values: np.ndarray, k_max: int) -> np.ndarray:
    """sum_{t < n-k} M_t M_{t+k} / (n - k) for k = 0..k_max."""
    n = values.size
    spectrum = np.fft.rfft(values, n=2 * n)
    sums = np.fft.irfft(spectrum * np.conjugate(spectrum), n=2 * n)[: k_max + 1]
    return sums / (n - np.arange(k_max + 1))


def margins_along(traj: Trajectory, h: Predictor) -> np.ndarray:
    """M_t = y_t * h(x_t) along the trajectory."""
    return np.asarray(traj.y, dtype=float) * _predict(h, np.asarray(traj.x)).astype(float)


def margin_autocov(traj: Trajectory, h: Predictor, k_max: int, centered: bool = False) -> np.ndarray:
    """Lag-k averages of margin products, k = 0..k_max.

    Uncentered by default; ``centered=True`` subtracts the mean margin first.
    """
    if k_max < 0 or k_max >= traj.n / 2:
        raise ArgumentError(f"k_max must lie in [0, n/2), got {k_max} with n={traj.n}")
    values = margins_along(traj, h)
    if centered:
        values = values - values.mean()
    return _lag_products(values, k_max)


def variance_functional(traj: Trajectory, h: Predictor, truncation_lag: int) -> float:
    """Truncated long-run variance gamma_0 + 2 sum_{k<=lag} (1 - k/n) gamma_k of the centered margins."""
    n = traj.n
    if truncation_lag < 0 or truncation_lag >= n:
        raise ArgumentError(f"truncation_lag must lie in [0, n={n}), got {truncation_lag}")
    values = margins_along(traj, h)
    gamma = _lag_products(values - values.mean(), truncation_lag)
    k = np.arange(1, truncation_lag + 1)
    return float(gamma[0] + 2.0 * np.sum((1.0 - k / n) * gamma[1:]))


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.size != ys.size or xs.size < 2:
        raise ArgumentError("Need at least 2 (x, y) points of equal count")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ArgumentError("Log-log fit needs positive values")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def rate_slope(points: Sequence[Tuple[float, float]]) -> float:
    """Slope of log(risk) against log(t_mix) over (t_mix, risk) points."""
    points = list(points)
    if len(points) < 3:
        raise ArgumentError(f"rate_slope needs at least 3 points, got {len(points)}")
    t_mix, risk = zip(*points)
    return loglog_slope(t_mix, risk)


def summarize(frame: pd.DataFrame, by: Sequence[str], columns: Sequence[str]) -> pd.DataFrame:
    """Mean and standard error of ``columns`` per group, plus the seed count."""
    grouped = frame.groupby(list(by), sort=True)
    out = grouped[list(columns)].agg(["mean", "sem"])
    out.columns = [f"{col}_{stat.replace('sem', 'se')}" for col, stat in out.columns]
    out["seeds"] = grouped.size()
    return out.reset_index()
