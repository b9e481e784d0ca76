"""
Replay-buffer variance under linear function approximation.

An exploratory uniform-random policy walks on the d-dimensional unit torus;
the Gaussian step size is chosen so the first Fourier mode decorrelates on
the scale of ``t_mix`` steps. m linear evaluators are fitted to Bellman
targets against a frozen weight vector, each on its own resampled batch
from the shared buffer, and the spread of their average is measured under
uniform and spectrally routed sampling.
"""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import eigvalsh, solve

from src.depgraph import GraphRecipe, build_point_graph
from src.errors import ArgumentError, ConfigurationError, DataError
from src.performance import parallel_map
from src.resampling import SchemeKind, draw_spectral_routed, draw_uniform, natural_size
from src.seeding import derive_seed, stream
from src.spectral import nystrom_fiedler, partition_count, route_partitions
from src import storage

logger = logging.getLogger("specroute.replay_lfa")

CONDITIONING_FLOOR = 1e-3
RESKETCHES = 4


@dataclass(frozen=True)
class ReplayConfig:
    """Replay experiment parameters.

    ``feat_dim`` follows from the feature map: n_actions * (1 + 2 * state_dim).
    ``target_weights`` of None draws a fixed w_old from ``seed``.
    """

    n_buffer: int = 20000
    t_mix: int = 10
    state_dim: int = 2
    n_actions: int = 2
    gamma_discount: float = 0.9
    m: int = 20
    target_weights: Optional[Tuple[float, ...]] = None
    seed: int = 0
    reward_noise: float = 0.1
    ridge_scale: float = 1e-6
    knn_k: int = 10
    c: float = 1.0
    landmarks: Optional[int] = None

    @property
    def feat_dim(self) -> int:
        return self.n_actions * (1 + 2 * self.state_dim)

    @property
    def feature_bound(self) -> float:
        """||phi(s, a)|| for every (s, a): one bias plus state_dim unit (cos, sin) pairs."""
        return math.sqrt(1 + self.state_dim)

    @property
    def step_scale(self) -> float:
        """Torus step std with exp(-2 pi^2 sigma^2) = 1 - 1/t_mix; infinite means a uniform redraw."""
        if self.t_mix <= 1:
            return math.inf
        return math.sqrt(-math.log(1.0 - 1.0 / self.t_mix) / (2.0 * math.pi ** 2))

    def validate(self) -> "ReplayConfig":
        if self.n_buffer < 2:
            raise ConfigurationError(f"n_buffer must be >= 2, got {self.n_buffer}")
        if self.t_mix < 1:
            raise ConfigurationError(f"t_mix must be >= 1, got {self.t_mix}")
        if self.state_dim < 1 or self.n_actions < 1:
            raise ConfigurationError("state_dim and n_actions must be positive")
        if not 0 <= self.gamma_discount < 1:
            raise ConfigurationError(f"gamma_discount must lie in [0, 1), got {self.gamma_discount}")
        if self.m < 1:
            raise ConfigurationError(f"m must be >= 1, got {self.m}")
        if self.target_weights is not None and len(self.target_weights) != self.feat_dim:
            raise ConfigurationError(f"target_weights needs {self.feat_dim} entries, got {len(self.target_weights)}")
        return self

    def w_old(self) -> np.ndarray:
        if self.target_weights is not None:
            return np.asarray(self.target_weights, dtype=float)
        return stream(self.seed, "w_old").normal(0.0, 1.0 / math.sqrt(self.feat_dim), size=self.feat_dim)


@dataclass(frozen=True, eq=False)
class ReplayBuffer:
    """Transitions (s_t, a_t, r_t, s_{t+1}) stored as a state path of length n + 1."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    config: ReplayConfig
    min_eigenvalue: float
    max_eigenvalue: float

    @property
    def n(self) -> int:
        return int(self.actions.size)

    @property
    def current_states(self) -> np.ndarray:
        return self.states[:-1]

    @property
    def next_states(self) -> np.ndarray:
        return self.states[1:]

    @property
    def phi(self) -> np.ndarray:
        """(n, feat_dim) features of the taken (state, action) pairs."""
        return features(self.current_states, self.actions, self.config.n_actions)

    def next_phi(self) -> np.ndarray:
        """(n, n_actions, feat_dim) features of every action at the next state."""
        n, a = self.n, self.config.n_actions
        actions = np.tile(np.arange(a), n)
        return features(np.repeat(self.next_states, a, axis=0), actions, a).reshape(n, a, -1)


def state_embedding(states: np.ndarray) -> np.ndarray:
    """(cos 2 pi s_i, sin 2 pi s_i) for every coordinate, interleaved."""
    angles = 2.0 * math.pi * np.asarray(states, dtype=float)
    return np.stack([np.cos(angles), np.sin(angles)], axis=-1).reshape(angles.shape[0], -1)


def features(states: np.ndarray, actions: np.ndarray, n_actions: int) -> np.ndarray:
    """phi(s, a): one-hot(a) outer [1, cos, sin, ...], flattened."""
    base = np.hstack([np.ones((states.shape[0], 1)), state_embedding(states)])
    one_hot = np.eye(n_actions)[np.asarray(actions, dtype=np.int64)]
    return (one_hot[:, :, None] * base[:, None, :]).reshape(states.shape[0], -1)


def _reward(cfg: ReplayConfig, states: np.ndarray, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    action_sign = 2.0 * actions / (cfg.n_actions - 1) - 1.0 if cfg.n_actions > 1 else np.zeros(actions.size)
    angles = 2.0 * math.pi * states
    reward = np.cos(angles[:, 0]) + 0.5 * action_sign * np.sin(angles[:, -1])
    return reward + rng.normal(0.0, cfg.reward_noise, size=actions.size)


def feature_spectrum(phi: np.ndarray) -> Tuple[float, float]:
    """(min, max) eigenvalue of the second-moment matrix phi^T phi / n."""
    values = eigvalsh(phi.T @ phi / phi.shape[0])
    return float(values[0]), float(values[-1])


def fill_buffer(cfg: ReplayConfig) -> ReplayBuffer:
    """Run the exploratory policy for ``n_buffer`` steps.

    Raises:
        DataError: feature second moment worse conditioned than 1e-3
    """
    cfg.validate()
    rng = stream(cfg.seed, "replay")
    n, d = cfg.n_buffer, cfg.state_dim
    sigma = cfg.step_scale
    if math.isinf(sigma):
        states = rng.random((n + 1, d))
    else:
        steps = rng.normal(0.0, sigma, size=(n, d))
        states = np.mod(np.vstack([rng.random((1, d)), steps]).cumsum(axis=0), 1.0)
    actions = rng.integers(0, cfg.n_actions, size=n)
    rewards = _reward(cfg, states[:-1], actions, rng)

    lo, hi = feature_spectrum(features(states[:-1], actions, cfg.n_actions))
    if lo < CONDITIONING_FLOOR * hi:
        raise DataError(
            f"Replay features are ill-conditioned: lambda_min={lo:.2e} < {CONDITIONING_FLOOR:g} * lambda_max={hi:.2e}"
        )
    for array in (states, actions, rewards):
        array.setflags(write=False)
    logger.debug(f"Filled replay buffer n={n} t_mix={cfg.t_mix}: lambda_min={lo:.3e}, B={cfg.feature_bound:.3f}")
    return ReplayBuffer(states, actions, rewards, cfg, lo, hi)


def compute_targets(buf: ReplayBuffer, w_old: np.ndarray, gamma_discount: float) -> np.ndarray:
    """Bellman targets r_t + gamma * max_a phi(s_{t+1}, a)^T w_old."""
    w_old = np.asarray(w_old, dtype=float)
    if w_old.size != buf.config.feat_dim:
        raise ArgumentError(f"w_old needs {buf.config.feat_dim} entries, got {w_old.size}")
    best_next = (buf.next_phi() @ w_old).max(axis=1)
    return buf.rewards + gamma_discount * best_next


def weighted_lfa_solve(phi: np.ndarray, targets: np.ndarray, weights: np.ndarray, ridge_scale: float = 1e-6) -> np.ndarray:
    """Weighted normal equations (Phi^T W Phi / N + eps I) w = Phi^T W y / N, eps = ridge_scale * trace / dim."""
    total = float(weights.sum())
    weighted = phi * weights[:, None]
    second_moment = weighted.T @ phi / total
    eps = ridge_scale * float(np.trace(second_moment)) / phi.shape[1]
    rhs = weighted.T @ targets / total
    return solve(second_moment + eps * np.eye(phi.shape[1]), rhs, assume_a="pos")


def lfa_solve(buf: ReplayBuffer, indices: np.ndarray, targets: np.ndarray, ridge_scale: Optional[float] = None) -> np.ndarray:
    """Ridge-stabilized least squares over an index multiset of the buffer.

    Duplicates enter as weights, so a multiset and its deduplicated form with
    multiplicities give the same solution.
    """
    indices = np.asarray(indices, dtype=np.int64)
    feat_dim = buf.config.feat_dim
    if indices.size < feat_dim:
        raise ArgumentError(f"Need at least feat_dim={feat_dim} indices, got {indices.size}")
    unique, counts = np.unique(indices, return_counts=True)
    y = np.asarray(targets, dtype=float)[unique]
    if np.isnan(y).any():
        raise DataError(f"{int(np.isnan(y).sum())} NaN target(s) in the batch")
    scale = buf.config.ridge_scale if ridge_scale is None else ridge_scale
    return weighted_lfa_solve(features(buf.current_states[unique], buf.actions[unique], buf.config.n_actions),
                              y, counts.astype(float), scale)


def _sketch_landmarks(cfg: ReplayConfig, n: int) -> int:
    if cfg.landmarks is not None:
        return min(cfg.landmarks, n)
    return min(n, int(math.ceil(cfg.t_mix * math.log(n) ** 2)))


def resketch_gaps(buf: ReplayBuffer, seed: int) -> List[float]:
    """Nystrom lambda2 of the buffer dependency graph after every quarter of the fill.

    The graph joins feature k-NN edges on the torus embedding of the states
    with the temporal path; each sketch sees only the prefix inserted so far.
    """
    cfg = buf.config
    embedding = state_embedding(buf.current_states)
    recipe = GraphRecipe.union(GraphRecipe.feature_knn(cfg.knn_k), GraphRecipe.temporal_window(1))
    gaps = []
    for stage in range(1, RESKETCHES + 1):
        prefix = max(cfg.knn_k + 2, buf.n * stage // RESKETCHES)
        g = build_point_graph(embedding[:prefix], recipe)
        landmarks = _sketch_landmarks(cfg, prefix)
        gaps.append(nystrom_fiedler(g, landmarks, derive_seed(seed, "sketch", stage))[0])
        logger.debug(f"Re-sketch {stage}/{RESKETCHES} at {prefix} transitions: lambda2={gaps[-1]:.4e}")
    return gaps


def draw_replay_batches(buf: ReplayBuffer, kind: SchemeKind, seed: int) -> List[np.ndarray]:
    """Per-learner index multisets under uniform or spectrally routed sampling."""
    cfg = buf.config
    if kind is SchemeKind.UNIFORM:
        return draw_uniform(buf.n, cfg.m, max(cfg.feat_dim, natural_size(buf.n, cfg.m)), seed).per_learner
    if kind is not SchemeKind.SPECTRAL_ROUTE:
        raise ArgumentError(f"Replay study supports uniform and spectral_route, got {kind.value}")

    gaps = resketch_gaps(buf, seed)
    logger.info("Buffer lambda2 over the fill: " + ", ".join(f"{g:.4e}" for g in gaps))
    lambda2 = gaps[-1]
    p_hat = min(partition_count(lambda2, cfg.c, cfg.m), buf.n // max(cfg.feat_dim, 2))
    path = build_point_graph(buf.current_states, GraphRecipe.temporal_window(1))
    plan = route_partitions(path, cfg.m, cfg.c, p_override=max(p_hat, 1))
    return draw_spectral_routed(plan, cfg.m, seed).per_learner


class ReplaySeed(NamedTuple):
    seed_index: int
    w_bar: np.ndarray
    batch_target_var: float


def replay_seed(cfg: ReplayConfig, kind: SchemeKind, seed_index: int, master_seed: int) -> ReplaySeed:
    """One buffer, one ensemble: mean weights and the mean per-batch target variance."""
    w_old = cfg.w_old()
    buf = fill_buffer(replace(cfg, seed=derive_seed(master_seed, "buffer", seed_index)))
    targets = compute_targets(buf, w_old, cfg.gamma_discount)
    batches = draw_replay_batches(buf, kind, derive_seed(master_seed, "batches", seed_index))
    weights = np.vstack([lfa_solve(buf, idx, targets) for idx in batches])
    target_var = float(np.mean([np.var(targets[idx], ddof=1) for idx in batches]))
    return ReplaySeed(seed_index, weights.mean(axis=0), target_var)


def _replay_seed(task: Tuple[ReplayConfig, SchemeKind, int, int]) -> ReplaySeed:
    return replay_seed(*task)


class ReplayVariance(NamedTuple):
    var_wbar: float
    var_wbar_se: float
    target_var: float
    baseline_target_var: float
    target_var_drop: float
    per_seed: Tuple[ReplaySeed, ...] = ()


def _weight_spread(cfg: ReplayConfig, kind: SchemeKind, n_seeds: int, master_seed: int, threads: int):
    tasks = [(cfg, kind, s, master_seed) for s in range(n_seeds)]
    seeds = sorted(parallel_map(_replay_seed, tasks, max_workers=threads), key=lambda r: r.seed_index)
    w_bar = np.vstack([r.w_bar for r in seeds])
    var_wbar = float(np.var(w_bar, axis=0, ddof=1).sum())
    target_var = float(np.mean([r.batch_target_var for r in seeds]))
    return var_wbar, var_wbar * math.sqrt(2.0 / (n_seeds - 1)), target_var, tuple(seeds)


def ensemble_weight_variance(cfg: ReplayConfig, scheme: SchemeKind, n_seeds: int = 20, master_seed: int = 0,
                             threads: int = 1) -> ReplayVariance:
    """Trace variance of the ensemble-mean weights and the drop in per-batch target variance.

    The drop is 1 - target_var(scheme) / target_var(uniform) on the same
    buffers (zero for the uniform scheme itself).

    Args:
        cfg: Replay configuration (its seed is replaced per run)
        scheme: SchemeKind.UNIFORM or SchemeKind.SPECTRAL_ROUTE
        n_seeds: Independent buffers, at least 2 (20 recommended)
        master_seed: Seed the buffers derive from
        threads: Worker processes

    Returns:
        ReplayVariance
    """
    cfg.validate()
    if n_seeds < 2:
        raise ArgumentError(f"n_seeds must be >= 2, got {n_seeds}")
    if n_seeds < 20:
        logger.warning(f"Replay variance from {n_seeds} seeds is noisy; 20 or more recommended")
    var_wbar, se, target_var, per_seed = _weight_spread(cfg, scheme, n_seeds, master_seed, threads)
    if scheme is SchemeKind.UNIFORM:
        baseline = target_var
    else:
        baseline = _weight_spread(cfg, SchemeKind.UNIFORM, n_seeds, master_seed, threads)[2]
    drop = 1.0 - target_var / baseline if baseline > 0 else 0.0
    logger.info(f"Replay {scheme.value} t_mix={cfg.t_mix}: var(w_bar)={var_wbar:.3e}, target variance drop={drop:.1%}")
    return ReplayVariance(var_wbar, se, target_var, baseline, drop, per_seed)


def save_buffer(buf: ReplayBuffer, path: Union[str, Path]) -> None:
    """Columnar dump: states (n+1 rows), actions and rewards."""
    cfg = buf.config
    header = {
        "n_buffer": cfg.n_buffer, "t_mix": cfg.t_mix, "state_dim": cfg.state_dim,
        "n_actions": cfg.n_actions, "gamma_discount": repr(cfg.gamma_discount), "seed": cfg.seed,
        "feature_bound": repr(cfg.feature_bound), "min_eigenvalue": repr(buf.min_eigenvalue),
    }
    storage.write_columnar(path, header, {"states": buf.states, "actions": buf.actions, "rewards": buf.rewards})


def replay_frame(scheme: SchemeKind, t_mix: int, result: ReplayVariance) -> pd.DataFrame:
    """Per-seed results table (scheme, t_mix, seed, var_wbar, target_var).

    ``var_wbar`` is an across-seed quantity and repeats on every row.
    """
    return pd.DataFrame({
        "scheme": scheme.value,
        "t_mix": t_mix,
        "seed": [r.seed_index for r in result.per_seed],
        "var_wbar": result.var_wbar,
        "target_var": [r.batch_target_var for r in result.per_seed],
    })
