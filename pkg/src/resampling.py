"""
Per-learner training index sets.

Every scheme returns a SubsampleSet: one sorted index multiset per base
learner. Learner j draws from its own stream ``stream(seed, "learner", j)``,
so results do not depend on how many learners are drawn or in what order.
"""

import enum
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from arch.bootstrap import optimal_block_length

from src.chain_sim import Trajectory
from src.depgraph import DependencyGraph, GraphRecipe, build_graph
from src.errors import ArgumentError, RoutingError
from src.seeding import stream
from src.spectral import (
    MethodKind,
    SpectralMethod,
    SpectralPlan,
    SplitRule,
    fiedler_pair,
    nystrom_fiedler,
    partition_count,
    route_partitions,
)
from src import storage

logger = logging.getLogger("specroute.resampling")

DEFAULT_LAG_STRIDE = 2


class SchemeKind(str, enum.Enum):
    UNIFORM = "uniform"
    LAG_THIN = "lag_thin"
    TMIX_THIN = "tmix_thin"
    STATIONARY_BOOT = "stationary_boot"
    CIRCULAR_BB = "circular_bb"
    ORACLE_BB = "oracle_bb"
    AUTO_BB = "auto_bb"
    SPECTRAL_ROUTE = "spectral_route"


@dataclass(frozen=True)
class ResamplingScheme:
    """A tagged resampling strategy.

    Only the parameter belonging to ``kind`` is meaningful. ``subsample_size``
    of None means the scheme's natural size (n/m for most schemes).
    """

    kind: SchemeKind
    subsample_size: Optional[int] = None
    seed: int = 0
    stride: Optional[int] = None
    mean_block: Optional[float] = None
    block_len: Optional[int] = None
    plan: Optional[SpectralPlan] = None
    disjoint: bool = False
    partitions: Optional[int] = None

    @classmethod
    def uniform(cls, **kwargs) -> "ResamplingScheme":
        return cls(SchemeKind.UNIFORM, **kwargs)

    @classmethod
    def lag_thin(cls, stride: int = DEFAULT_LAG_STRIDE, **kwargs) -> "ResamplingScheme":
        return cls(SchemeKind.LAG_THIN, stride=int(stride), **kwargs)

    @classmethod
    def tmix_thin(cls, **kwargs) -> "ResamplingScheme":
        return cls(SchemeKind.TMIX_THIN, **kwargs)

    @classmethod
    def stationary_boot(cls, mean_block: float, **kwargs) -> "ResamplingScheme":
        return cls(SchemeKind.STATIONARY_BOOT, mean_block=float(mean_block), **kwargs)

    @classmethod
    def circular_bb(cls, block_len: int, **kwargs) -> "ResamplingScheme":
        return cls(SchemeKind.CIRCULAR_BB, block_len=int(block_len), **kwargs)

    @classmethod
    def oracle_bb(cls, block_len: int, **kwargs) -> "ResamplingScheme":
        return cls(SchemeKind.ORACLE_BB, block_len=int(block_len), **kwargs)

    @classmethod
    def auto_bb(cls, **kwargs) -> "ResamplingScheme":
        return cls(SchemeKind.AUTO_BB, **kwargs)

    @classmethod
    def spectral_route(cls, plan: Optional[SpectralPlan] = None, **kwargs) -> "ResamplingScheme":
        return cls(SchemeKind.SPECTRAL_ROUTE, plan=plan, **kwargs)

    def validate(self, n: Optional[int] = None) -> "ResamplingScheme":
        if self.stride is not None and self.stride < 1:
            raise ArgumentError(f"stride must be >= 1, got {self.stride}")
        if self.mean_block is not None and self.mean_block < 1:
            raise ArgumentError(f"mean_block must be >= 1, got {self.mean_block}")
        if self.block_len is not None and self.block_len < 1:
            raise ArgumentError(f"block_len must be >= 1, got {self.block_len}")
        if self.partitions is not None and self.partitions < 1:
            raise ArgumentError(f"partitions must be >= 1, got {self.partitions}")
        if self.subsample_size is not None:
            if self.subsample_size < 1:
                raise ArgumentError(f"subsample_size must be >= 1, got {self.subsample_size}")
            if n is not None and self.subsample_size > n:
                raise ArgumentError(f"subsample_size {self.subsample_size} exceeds n={n}")
        needs = {
            SchemeKind.STATIONARY_BOOT: self.mean_block,
            SchemeKind.CIRCULAR_BB: self.block_len,
            SchemeKind.ORACLE_BB: self.block_len,
        }
        if self.kind in needs and needs[self.kind] is None:
            raise ArgumentError(f"Scheme {self.kind.value} is missing its block parameter")
        return self

    def tag(self) -> str:
        """Short provenance label, e.g. ``circular_bb(50)``."""
        param = {
            SchemeKind.LAG_THIN: self.stride,
            SchemeKind.TMIX_THIN: self.stride,
            SchemeKind.STATIONARY_BOOT: self.mean_block,
            SchemeKind.CIRCULAR_BB: self.block_len,
            SchemeKind.ORACLE_BB: self.block_len,
            SchemeKind.AUTO_BB: self.block_len,
            SchemeKind.SPECTRAL_ROUTE: self.plan.p_hat if self.plan is not None else self.partitions,
        }.get(self.kind)
        return self.kind.value if param is None else f"{self.kind.value}({param:g})"


@dataclass(frozen=True, eq=False)
class SubsampleSet:
    """Sorted index multisets, one per learner."""

    per_learner: List[np.ndarray]
    scheme: ResamplingScheme
    n: int
    degenerate: bool = False

    @property
    def m(self) -> int:
        return len(self.per_learner)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([idx.size for idx in self.per_learner])

    def index_counts(self) -> np.ndarray:
        """How often each index in [0, n) was drawn over all learners."""
        return np.bincount(np.concatenate(self.per_learner), minlength=self.n)


def natural_size(n: int, m: int) -> int:
    """Fixed subsample size n/m, rounded, at least 1."""
    return max(1, int(round(n / m)))


def _check(n: int, m: int, size: Optional[int] = None) -> None:
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    if m < 1:
        raise ArgumentError(f"m must be >= 1, got {m}")
    if size is not None and size < 1:
        raise ArgumentError(f"size must be >= 1, got {size}")


def _finish(per_learner: List[np.ndarray], scheme: ResamplingScheme, n: int, degenerate: bool = False) -> SubsampleSet:
    per_learner = [np.sort(idx).astype(np.int64) for idx in per_learner]
    for idx in per_learner:
        idx.setflags(write=False)
    return SubsampleSet(per_learner, scheme, n, degenerate)


def blocks_to_indices(starts: np.ndarray, lengths: np.ndarray, n: int, size: int) -> np.ndarray:
    """Concatenate circular blocks (start, length) in emission order, truncated to ``size``."""
    lengths = np.asarray(lengths, dtype=np.int64)
    block_id = np.repeat(np.arange(lengths.size), lengths)
    offsets = np.arange(block_id.size) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return ((np.asarray(starts, dtype=np.int64)[block_id] + offsets) % n)[:size]


def draw_uniform(n: int, m: int, size: int, seed: int) -> SubsampleSet:
    """I.i.d. uniform bootstrap with replacement, ``size`` indices per learner."""
    _check(n, m, size)
    per_learner = [stream(seed, "learner", j).integers(0, n, size=size) for j in range(m)]
    return _finish(per_learner, ResamplingScheme.uniform(subsample_size=size, seed=seed), n)


def draw_stationary_bootstrap(n: int, m: int, size: int, mean_block: float, seed: int) -> SubsampleSet:
    """Stationary bootstrap: geometric block lengths with mean ``mean_block``,
    uniform circular starts, final block truncated."""
    _check(n, m, size)
    if mean_block < 1:
        raise ArgumentError(f"mean_block must be >= 1, got {mean_block}")
    p = 1.0 / mean_block
    per_learner = []
    for j in range(m):
        rng = stream(seed, "learner", j)
        lengths = np.empty(0, dtype=np.int64)
        while lengths.sum() < size:
            batch = max(8, int(2 * size * p) + 1)
            lengths = np.concatenate([lengths, rng.geometric(p, size=batch)])
        used = int(np.searchsorted(np.cumsum(lengths), size)) + 1
        starts = rng.integers(0, n, size=used)
        per_learner.append(blocks_to_indices(starts, lengths[:used], n, size))
    scheme = ResamplingScheme.stationary_boot(mean_block, subsample_size=size, seed=seed)
    return _finish(per_learner, scheme, n)


def draw_circular_block(n: int, m: int, size: int, block_len: int, seed: int) -> SubsampleSet:
    """Circular block bootstrap with fixed ``block_len`` and uniform starts."""
    _check(n, m, size)
    if block_len < 1:
        raise ArgumentError(f"block_len must be >= 1, got {block_len}")
    n_blocks = math.ceil(size / block_len)
    lengths = np.full(n_blocks, block_len)
    per_learner = [
        blocks_to_indices(stream(seed, "learner", j).integers(0, n, size=n_blocks), lengths, n, size)
        for j in range(m)
    ]
    scheme = ResamplingScheme.circular_bb(block_len, subsample_size=size, seed=seed)
    return _finish(per_learner, scheme, n)


def draw_block_bagging(n: int, m: int, block_len: int, seed: int, disjoint: bool = False) -> SubsampleSet:
    """Bag whole non-overlapping blocks of length ``block_len``.

    [0, n) is cut into ceil(n / block_len) contiguous blocks (the last one may
    be short). Each learner draws round(n / (m * block_len)) blocks, at least
    one, with replacement. With ``disjoint`` the blocks are instead shuffled
    once and dealt out so that no two learners share a block.
    """
    _check(n, m)
    if block_len < 1 or block_len > n:
        raise ArgumentError(f"block_len must lie in [1, n={n}], got {block_len}")
    n_blocks = math.ceil(n / block_len)
    block_starts = np.arange(n_blocks) * block_len
    block_lengths = np.minimum(block_len, n - block_starts)
    per_block = max(1, int(round(n / (m * block_len))))

    if disjoint:
        if m > n_blocks:
            raise ArgumentError(f"Cannot deal {n_blocks} blocks to {m} learners without sharing")
        order = stream(seed, "blocks").permutation(n_blocks)
        chosen = [order[j::m][:per_block] for j in range(m)]
    else:
        chosen = [stream(seed, "learner", j).integers(0, n_blocks, size=per_block) for j in range(m)]

    per_learner = [
        blocks_to_indices(block_starts[ids], block_lengths[ids], n, int(block_lengths[ids].sum()))
        for ids in chosen
    ]
    scheme = ResamplingScheme.oracle_bb(block_len, seed=seed, disjoint=disjoint)
    return _finish(per_learner, scheme, n)


def thinned_pool(n: int, stride: int) -> np.ndarray:
    """Retained indices {0, stride, 2 stride, ...}, floor(n / stride) of them (at least one)."""
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    return np.arange(max(1, n // stride), dtype=np.int64) * stride


def draw_thinned(n: int, m: int, stride: int, seed: int, size: Optional[int] = None,
                 kind: SchemeKind = SchemeKind.LAG_THIN) -> SubsampleSet:
    """Thin to every ``stride``-th index, then uniform-bootstrap from the pool.

    Args:
        n: Trajectory length
        m: Number of learners
        stride: Thinning stride (LagThin) or ceil(c / lambda2) (TmixThin)
        seed: Seed
        size: Per-learner size (defaults to pool size / m)
        kind: Provenance tag, LAG_THIN or TMIX_THIN

    Returns:
        SubsampleSet, flagged degenerate when the pool has a single index
    """
    _check(n, m, size)
    pool = thinned_pool(n, stride)
    degenerate = pool.size == 1
    if degenerate:
        logger.warning(f"Thinning stride {stride} >= n={n}: pool of size 1")
    size = natural_size(pool.size, m) if size is None else size
    per_learner = [pool[stream(seed, "learner", j).integers(0, pool.size, size=size)] for j in range(m)]
    scheme = ResamplingScheme(kind, subsample_size=size, seed=seed, stride=int(stride))
    return _finish(per_learner, scheme, n, degenerate)


def learner_partitions(sizes: np.ndarray, m: int) -> np.ndarray:
    """Partition index of each learner: floor(m / P) per partition, the
    remainder going one each to the largest partitions; learners are numbered
    partition by partition."""
    p = sizes.size
    counts = np.full(p, m // p)
    largest = np.argsort(-sizes, kind="stable")[: m % p]
    counts[largest] += 1
    return np.repeat(np.arange(p), counts)


def draw_spectral_routed(plan: SpectralPlan, m: int, seed: int, size: Optional[int] = None) -> SubsampleSet:
    """Route learners to partitions and bag within each partition.

    Each learner bootstraps |D_p| indices from its partition D_p unless
    ``size`` fixes a common per-learner size.
    """
    _check(plan.assignment.size, m, size)
    if plan.p_hat > m:
        raise ArgumentError(f"Plan has {plan.p_hat} partitions but only {m} learners")
    sizes = plan.partition_sizes
    if plan.p_hat > 1 and sizes.min() < 2:
        raise RoutingError(f"Partition {int(np.argmin(sizes))} has {int(sizes.min())} sample(s); need at least 2")

    members = [plan.members(p) for p in range(plan.p_hat)]
    per_learner = []
    for j, part in enumerate(learner_partitions(sizes, m)):
        pool = members[part]
        draw = pool.size if size is None else size
        per_learner.append(pool[stream(seed, "learner", j).integers(0, pool.size, size=draw)])
    scheme = ResamplingScheme.spectral_route(plan, subsample_size=size, seed=seed)
    return _finish(per_learner, scheme, plan.assignment.size)


def auto_block_length(series: np.ndarray) -> int:
    """Automatic circular block length of a 1D series (Politis-White selector)."""
    series = np.asarray(series, dtype=float)
    estimate = float(optimal_block_length(series)["circular"].iloc[0])
    if not np.isfinite(estimate):
        return 1
    return int(min(max(math.ceil(estimate), 1), series.size))


def draw_auto_block(series: np.ndarray, m: int, size: int, seed: int) -> SubsampleSet:
    """Circular block bootstrap with the block length chosen from ``series``."""
    block_len = auto_block_length(series)
    logger.info(f"Automatic block length: {block_len}")
    subs = draw_circular_block(series.size, m, size, block_len, seed)
    return replace(subs, scheme=ResamplingScheme.auto_bb(subsample_size=size, seed=seed, block_len=block_len))


def partition_recipe(traj: Trajectory, tau: int = 1) -> GraphRecipe:
    """Graph the samples are split on: spatial 4-NN on lattices, a temporal window on paths."""
    if traj.topology.is_lattice:
        return GraphRecipe.spatial_knn(4)
    return GraphRecipe.temporal_window(tau)


def gap_recipe(traj: Trajectory, knn_k: int = 10, tau: int = 1, feature_only: bool = False) -> GraphRecipe:
    """Graph lambda2 is estimated on: feature k-NN edges joined with the
    temporal or spatial neighbour edges (feature k-NN alone with ``feature_only``)."""
    if feature_only:
        return GraphRecipe.feature_knn(knn_k)
    return GraphRecipe.union(GraphRecipe.feature_knn(knn_k), partition_recipe(traj, tau))


def gap_graph(traj: Trajectory, knn_k: int = 10, tau: int = 1, feature_only: bool = False) -> DependencyGraph:
    """Dependency graph used to estimate lambda2.

    A disconnected feature-only graph is joined with the partition graph.
    """
    recipe = gap_recipe(traj, knn_k, tau, feature_only)
    g = build_graph(traj, recipe)
    if not g.is_connected():
        logger.warning(f"{recipe.describe()} graph has {g.components[0]} components; adding the partition graph")
        g = build_graph(traj, gap_recipe(traj, knn_k, tau))
    return g


def routing_plan(traj: Trajectory, m: int, c: float, method: SpectralMethod = SpectralMethod.exact(),
                 knn_k: int = 10, tau: int = 1, p_override: Optional[int] = None,
                 split_rule: SplitRule = SplitRule.MEDIAN, tol: float = 1e-8,
                 max_iter: int = 5000, feature_only: bool = False) -> SpectralPlan:
    """Spectral routing plan for a trajectory: gap from the dependency graph,
    bisection on the temporal or spatial graph."""
    partition_graph = build_graph(traj, partition_recipe(traj, tau))
    return route_partitions(
        partition_graph, m, c, method,
        gap_graph=gap_graph(traj, knn_k, tau, feature_only),
        p_override=p_override, split_rule=split_rule, tol=tol, max_iter=max_iter,
    )


def tmix_stride(traj: Trajectory, c: float, knn_k: int = 10, tau: int = 1,
                method: SpectralMethod = SpectralMethod.exact(), tol: float = 1e-8) -> int:
    """Thinning stride ceil(c / lambda2) estimated on the dependency graph."""
    g = gap_graph(traj, knn_k, tau)
    if method.kind is MethodKind.NYSTROM:
        lambda2 = nystrom_fiedler(g, min(method.landmarks, g.n_nodes), method.seed)[0]
    else:
        lambda2 = fiedler_pair(g, tol=tol).lambda2
    return partition_count(lambda2, c, traj.n)


def draw_scheme(traj: Trajectory, scheme: ResamplingScheme, m: int, c: float = 1.0,
                knn_k: int = 10, tau: int = 1, tol: float = 1e-8) -> SubsampleSet:
    """Dispatch a scheme against a trajectory.

    Schemes that need data (TmixThin, AutoBB, SpectralRoute without a plan)
    derive their parameter from ``traj`` here.

    Args:
        traj: Training trajectory
        scheme: Scheme to draw
        m: Number of learners
        c: Constant in ceil(c / lambda2)
        knn_k: Feature graph neighbours
        tau: Temporal window for the partition graph
        tol: Eigensolver tolerance

    Returns:
        SubsampleSet
    """
    n = traj.n
    scheme.validate(n)
    size = scheme.subsample_size or natural_size(n, m)
    kind = scheme.kind

    if kind is SchemeKind.UNIFORM:
        return draw_uniform(n, m, size, scheme.seed)
    if kind is SchemeKind.LAG_THIN:
        return draw_thinned(n, m, scheme.stride or DEFAULT_LAG_STRIDE, scheme.seed, scheme.subsample_size)
    if kind is SchemeKind.TMIX_THIN:
        stride = scheme.stride or tmix_stride(traj, c, knn_k, tau, tol=tol)
        logger.info(f"TmixThin stride: {stride}")
        return draw_thinned(n, m, stride, scheme.seed, scheme.subsample_size, SchemeKind.TMIX_THIN)
    if kind is SchemeKind.STATIONARY_BOOT:
        return draw_stationary_bootstrap(n, m, size, scheme.mean_block, scheme.seed)
    if kind is SchemeKind.CIRCULAR_BB:
        return draw_circular_block(n, m, size, scheme.block_len, scheme.seed)
    if kind is SchemeKind.ORACLE_BB:
        return draw_block_bagging(n, m, scheme.block_len, scheme.seed, scheme.disjoint)
    if kind is SchemeKind.AUTO_BB:
        return draw_auto_block(traj.x @ traj.config.direction, m, size, scheme.seed)

    plan = scheme.plan or routing_plan(traj, m, c, knn_k=knn_k, tau=tau, p_override=scheme.partitions, tol=tol)
    return draw_spectral_routed(plan, m, scheme.seed, scheme.subsample_size)


def subsample_frame(subs: SubsampleSet) -> pd.DataFrame:
    """Audit view: one row per (learner_id, index) with its multiplicity."""
    frames = []
    for j, idx in enumerate(subs.per_learner):
        unique, counts = np.unique(idx, return_counts=True)
        frames.append(pd.DataFrame({"learner_id": j, "index": unique, "multiplicity": counts}))
    if not frames:
        return pd.DataFrame(columns=["learner_id", "index", "multiplicity"])
    return pd.concat(frames, ignore_index=True)


def save_subsamples(subs: SubsampleSet, path: Union[str, Path]) -> Path:
    return storage.write_csv(subsample_frame(subs), path)
