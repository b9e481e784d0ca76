"""
Spectral routing plans.

Computes the Fiedler pair of the normalized Laplacian (ARPACK Lanczos with
the trivial vector D^{1/2}1 deflated, or a Nystrom sketch), derives the
adaptive partition count P = min(ceil(c / lambda2), m), and splits the
samples by recursive balanced bisection along local Fiedler vectors.
"""

import enum
import heapq
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from src.depgraph import (
    DependencyGraph,
    cut_edges,
    laplacian_operator,
    normalized_affinity,
    normalized_laplacian,
    normalized_laplacian_matvec,
)
from src.errors import ArgumentError, ConvergenceError, StructuralError
from src.performance import timed
from src.seeding import stream
from src import storage

logger = logging.getLogger("specroute.spectral")

# Graphs smaller than this are solved densely (ARPACK needs ncv < n).
DENSE_CUTOFF = 8
# Shift for the shift-invert Lanczos; L - SHIFT*I is positive definite.
SHIFT = -1e-10
POLISH_STEPS = 25
# Above this size a sparse LU is only attempted on narrow-band graphs.
FACTOR_CUTOFF = 2000


class FiedlerPair(NamedTuple):
    lambda2: float
    vector: np.ndarray
    residual: float


class MethodKind(str, enum.Enum):
    EXACT_LANCZOS = "exact_lanczos"
    NYSTROM = "nystrom"


class SplitRule(str, enum.Enum):
    MEDIAN = "median"
    SIGN = "sign"


@dataclass(frozen=True)
class SpectralMethod:
    """Eigensolver choice for the global gap estimate."""

    kind: MethodKind = MethodKind.EXACT_LANCZOS
    landmarks: Optional[int] = None
    seed: int = 0

    @classmethod
    def exact(cls) -> "SpectralMethod":
        return cls(MethodKind.EXACT_LANCZOS)

    @classmethod
    def nystrom(cls, landmarks: int, seed: int = 0) -> "SpectralMethod":
        return cls(MethodKind.NYSTROM, int(landmarks), int(seed))

    def describe(self) -> str:
        if self.kind is MethodKind.NYSTROM:
            return f"nystrom(l={self.landmarks})"
        return self.kind.value


@dataclass(frozen=True, eq=False)
class NystromSketch:
    """Landmark sketch of the lazy affinity K = (I + D^{-1/2} W D^{-1/2}) / 2."""

    landmarks: np.ndarray
    c_block: sp.csc_matrix
    w_ll: np.ndarray
    ridge_eps: float


@dataclass(frozen=True, eq=False)
class SpectralPlan:
    """Routing plan: gap estimate, partition count and per-sample assignment."""

    lambda2_hat: float
    fiedler: np.ndarray
    p_hat: int
    assignment: np.ndarray
    cut_count: int
    method: SpectralMethod
    c: float

    @property
    def partition_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.p_hat)

    def members(self, part: int) -> np.ndarray:
        """Sorted sample indices of partition ``part``."""
        return np.flatnonzero(self.assignment == part)


def _require_connected(g: DependencyGraph) -> None:
    if g.n_nodes < 2:
        raise StructuralError("Fiedler pair needs at least two nodes")
    if g.isolated.size:
        raise StructuralError(f"Graph has {g.isolated.size} isolated node(s)")
    if not g.is_connected():
        raise StructuralError(f"Graph is disconnected ({g.components[0]} components)")


def _sign_normalize(v: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(v))
    nonzero = np.flatnonzero(np.abs(v) > 1e-12 * scale)
    if nonzero.size and v[nonzero[0]] < 0:
        return -v
    return v


def _deflate(v: np.ndarray, u: np.ndarray) -> np.ndarray:
    return v - u * (u @ v)


def _residual(g: DependencyGraph, lam: float, v: np.ndarray) -> float:
    return float(np.linalg.norm(normalized_laplacian_matvec(g, v) - lam * v))


def _dense_fiedler(g: DependencyGraph) -> Tuple[float, np.ndarray]:
    values, vectors = eigh(normalized_laplacian(g).toarray())
    return float(values[1]), vectors[:, 1]


def _shift_invert_fiedler(g: DependencyGraph, u: np.ndarray, tol: float, max_iter: int) -> Tuple[float, np.ndarray]:
    n = g.n_nodes
    factor = splu((normalized_laplacian(g) - SHIFT * sp.identity(n, format="csr")).tocsc())

    def solve(b: np.ndarray) -> np.ndarray:
        return _deflate(factor.solve(_deflate(np.ravel(b), u)), u)

    op_inv = LinearOperator((n, n), matvec=solve, dtype=float)
    v0 = _deflate(stream(n, "fiedler-v0").standard_normal(n), u)
    try:
        values, vectors = eigsh(
            laplacian_operator(g), k=1, sigma=SHIFT, which="LM", OPinv=op_inv,
            v0=v0, tol=tol * 1e-2, maxiter=max_iter,
        )
    except ArpackNoConvergence as e:
        if e.eigenvectors is None or e.eigenvectors.shape[1] == 0:
            raise ConvergenceError(f"Lanczos did not converge in {max_iter} iterations")
        values, vectors = e.eigenvalues, e.eigenvectors
    v = _deflate(vectors[:, 0], u)
    v /= np.linalg.norm(v)
    lam = float(v @ normalized_laplacian_matvec(g, v))

    # inverse-iteration polish with the existing factorization
    for _ in range(POLISH_STEPS):
        if _residual(g, lam, v) <= tol:
            break
        v = solve(v)
        v /= np.linalg.norm(v)
        lam = float(v @ normalized_laplacian_matvec(g, v))
    return lam, v


def _matrix_free_fiedler(g: DependencyGraph, u: np.ndarray, tol: float, max_iter: int) -> Tuple[float, np.ndarray]:
    n = g.n_nodes

    def shifted(b: np.ndarray) -> np.ndarray:
        b = _deflate(np.ravel(b), u)
        return _deflate(2.0 * b - normalized_laplacian_matvec(g, b), u)

    op = LinearOperator((n, n), matvec=shifted, dtype=float)
    v0 = _deflate(stream(n, "fiedler-v0").standard_normal(n), u)
    try:
        values, vectors = eigsh(op, k=1, which="LA", v0=v0, tol=tol * 1e-2, maxiter=max_iter,
                                ncv=min(n - 1, 64))
    except ArpackNoConvergence:
        raise ConvergenceError(f"Matrix-free Lanczos did not converge in {max_iter} iterations")
    v = _deflate(vectors[:, 0], u)
    v /= np.linalg.norm(v)
    return float(v @ normalized_laplacian_matvec(g, v)), v


def prefers_factorization(g: DependencyGraph) -> bool:
    """True when a sparse LU of the Laplacian stays cheap.

    Paths and lattices in natural order have bandwidth b with b^2 <= 4n and
    factor with O(n b) fill. k-NN graphs over a trajectory connect far-apart
    indices and fill in badly, so above FACTOR_CUTOFF nodes they go to the
    matrix-free iteration instead.
    """
    if g.n_nodes <= FACTOR_CUTOFF or g.n_edges == 0:
        return True
    bandwidth = int(np.max(g.edges[:, 1] - g.edges[:, 0]))
    return bandwidth * bandwidth <= 4 * g.n_nodes


@timed
def fiedler_pair(g: DependencyGraph, tol: float = 1e-8, max_iter: int = 5000,
                 matrix_free: Optional[bool] = None) -> FiedlerPair:
    """Second-smallest eigenpair of the normalized Laplacian.

    Runs ARPACK's implicitly restarted Lanczos on the Laplacian with the
    known null vector D^{1/2}1 projected out. The shift-inverted iteration
    (one sparse factorization around a tiny negative shift) handles small and
    narrow-band graphs; the matrix-free iteration on 2I - L uses the
    edge-wise matvec only. With ``matrix_free=None`` the solver is picked by
    ``prefers_factorization`` and a matrix-free run that misses ``tol`` is
    retried with the factorization.

    Args:
        g: Connected graph
        tol: Required residual ||L v - lambda v||
        max_iter: Lanczos restart budget
        matrix_free: Force (True) or forbid (False) the matrix-free solver; None picks one

    Returns:
        FiedlerPair(lambda2, unit vector with first nonzero entry positive, residual)
    """
    if tol <= 0:
        raise ArgumentError(f"tol must be positive, got {tol}")
    _require_connected(g)
    u = g.sqrt_degrees()
    u = u / np.linalg.norm(u)

    auto = matrix_free is None
    if auto:
        matrix_free = not prefers_factorization(g)

    if g.n_nodes < DENSE_CUTOFF:
        lam, v = _dense_fiedler(g)
    elif matrix_free:
        try:
            lam, v = _matrix_free_fiedler(g, u, tol, max_iter)
        except ConvergenceError:
            if not auto:
                raise
            lam, v = np.nan, None
        if auto and (v is None or _residual(g, lam, v / np.linalg.norm(v)) > tol):
            logger.warning(f"Matrix-free Lanczos missed tol={tol:.1e} at n={g.n_nodes}; using shift-invert")
            lam, v = _shift_invert_fiedler(g, u, tol, max_iter)
    else:
        lam, v = _shift_invert_fiedler(g, u, tol, max_iter)

    v = _sign_normalize(v / np.linalg.norm(v))
    residual = _residual(g, lam, v)
    if residual > tol:
        raise ConvergenceError(
            f"Fiedler residual {residual:.3e} above tolerance {tol:.1e} (n={g.n_nodes})", residual=residual
        )
    logger.debug(f"Fiedler pair n={g.n_nodes}: lambda2={lam:.6e}, residual={residual:.2e}")
    return FiedlerPair(lam, v, residual)


def fiedler_embedding(g: DependencyGraph, vector: np.ndarray) -> np.ndarray:
    """Random-walk coordinates D^{-1/2} v used to order nodes for bisection."""
    return vector / g.sqrt_degrees()


@timed
def nystrom_fiedler(g: DependencyGraph, l: int, seed: int) -> Tuple[float, np.ndarray, NystromSketch]:
    """Approximate Fiedler pair from an l-landmark Nystrom sketch.

    The sketch approximates the lazy affinity K = (I + A)/2, A = D^{-1/2} W D^{-1/2},
    which is positive semidefinite with L = 2 (I - K). With C = K[:, landmarks] and
    W_ll = K[landmarks, landmarks] + eps I, the surrogate C W_ll^{-1} C^T is
    restricted to the complement of D^{1/2}1 and its top eigenpair is found by
    an l x l dense eigensolve, then lifted back to n dimensions.

    Args:
        g: Connected graph
        l: Number of landmarks, 2 <= l <= n
        seed: Landmark sampling seed

    Returns:
        (lambda2, unit vector, sketch)
    """
    n = g.n_nodes
    if l > n or l < 2:
        raise ArgumentError(f"Landmark count must lie in [2, n={n}], got {l}")
    _require_connected(g)
    u = g.sqrt_degrees()
    u = u / np.linalg.norm(u)

    rng = stream(seed, "nystrom-landmarks")
    landmarks = np.sort(rng.choice(n, size=l, replace=False))
    lazy = 0.5 * (sp.identity(n, format="csr") + normalized_affinity(g))
    c_block = lazy[:, landmarks].tocsc()
    w_ll = c_block[landmarks, :].toarray()
    w_ll = 0.5 * (w_ll + w_ll.T)
    ridge_eps = 1e-8 * float(np.trace(w_ll)) / l

    s, q = eigh(w_ll + ridge_eps * np.eye(l))
    whiten = (q / np.sqrt(s)) @ q.T

    ctu = np.asarray(c_block.T @ u).ravel()
    gram = np.asarray((c_block.T @ c_block).todense()) - np.outer(ctu, ctu)
    mu, vecs = eigh(whiten @ gram @ whiten, subset_by_index=[l - 1, l - 1])
    coeffs = whiten @ vecs[:, 0]
    v = _deflate(np.asarray(c_block @ coeffs).ravel(), u)
    v = _sign_normalize(v / np.linalg.norm(v))

    lambda2 = float(2.0 * (1.0 - mu[0]))
    logger.debug(f"Nystrom l={l}: lambda2={lambda2:.6e}, ridge={ridge_eps:.2e}")
    return lambda2, v, NystromSketch(landmarks, c_block, w_ll, ridge_eps)


def effective_rank(g: DependencyGraph, top_k: int) -> float:
    """Effective rank sum_{i<=top_k} lambda_i / lambda_1 of the affinity D^{-1/2} W D^{-1/2}.

    Only nonnegative eigenvalues contribute.
    """
    n = g.n_nodes
    if top_k < 1 or top_k > n:
        raise ArgumentError(f"top_k must lie in [1, n={n}], got {top_k}")
    affinity = normalized_affinity(g)
    if n <= 512 or top_k >= n - 1:
        values = np.linalg.eigvalsh(affinity.toarray())[::-1][:top_k]
    else:
        values = np.sort(eigsh(affinity, k=top_k, which="LA", return_eigenvectors=False))[::-1]
    values = np.clip(values, 0.0, None)
    return float(values.sum() / values[0])


def partition_count(lambda2_hat: float, c: float, m: int) -> int:
    """P = min(ceil(c / lambda2), m); a non-positive gap estimate gives m."""
    if lambda2_hat <= 0:
        return int(m)
    return int(min(math.ceil(c / lambda2_hat), m))


def _local_order(g: DependencyGraph, nodes: np.ndarray, vector: Optional[np.ndarray],
                 tol: float, max_iter: int) -> Tuple[np.ndarray, np.ndarray]:
    """Order ``nodes`` along the local Fiedler embedding; returns (ordered nodes, keys)."""
    sub = g.induced(nodes)
    count, labels = sub.components
    if count == 1 and sub.n_nodes >= 2:
        if vector is None:
            vector = fiedler_pair(sub, tol=tol, max_iter=max_iter).vector
        keys = fiedler_embedding(sub, vector)
        order = np.lexsort((nodes, keys))
        return nodes[order], keys[order]

    logger.warning(f"Induced subgraph of {nodes.size} nodes has {count} components; ordering by component first")
    keys = np.zeros(nodes.size)
    for comp in range(count):
        members = np.flatnonzero(labels == comp)
        if members.size >= 2:
            local = sub.induced(members)
            keys[members] = fiedler_embedding(local, fiedler_pair(local, tol=tol, max_iter=max_iter).vector)
    # squash keys into (0, 1) so the component label dominates
    squashed = labels + 0.5 + np.arctan(keys) / np.pi
    order = np.lexsort((nodes, squashed))
    return nodes[order], squashed[order]


def _split(ordered: np.ndarray, keys: np.ndarray, parts: int, rule: SplitRule) -> Tuple[np.ndarray, np.ndarray, int, int]:
    """Cut an ordered group that must become ``parts`` parts into two.

    The left side gets ceil(parts/2) parts and round(size * ceil(parts/2) / parts)
    nodes, the right side the rest, each side keeping at least one node per
    part. The sign rule moves a two-way cut to the sign change of ``keys``.
    """
    size = ordered.size
    left_parts, right_parts = (parts + 1) // 2, parts // 2
    cut = int(math.floor(size * left_parts / parts + 0.5))
    if rule is SplitRule.SIGN and parts == 2:
        sign_cut = int(np.count_nonzero(keys < 0))
        if 0 < sign_cut < size:
            cut = sign_cut
    cut = min(max(cut, left_parts), size - right_parts)
    return ordered[:cut], ordered[cut:], left_parts, right_parts


def recursive_bisection(g: DependencyGraph, parts: int, top_vector: Optional[np.ndarray] = None,
                        rule: SplitRule = SplitRule.MEDIAN, tol: float = 1e-8,
                        max_iter: int = 5000) -> np.ndarray:
    """Split the graph into ``parts`` groups by recursive bisection.

    The largest pending group is always split next. A group that must end
    up as t parts is split in the proportion ceil(t/2) : floor(t/2) along its
    own Fiedler ordering, so final sizes differ by at most one node under the
    median rule. Labels are numbered by each group's smallest member.

    Returns:
        Label vector in [0, parts)
    """
    n = g.n_nodes
    if parts < 1 or parts > n:
        raise ArgumentError(f"Cannot split {n} nodes into {parts} parts")
    assignment = np.zeros(n, dtype=np.int64)
    finished: List[np.ndarray] = []
    pending = [(-n, 0, parts, np.arange(n))]
    first = True
    while pending:
        _, _, t, nodes = heapq.heappop(pending)
        if t == 1:
            finished.append(nodes)
            continue
        ordered, keys = _local_order(g, nodes, top_vector if first else None, tol, max_iter)
        first = False
        left, right, lt, rt = _split(ordered, keys, t, rule)
        for side, count in ((np.sort(left), lt), (np.sort(right), rt)):
            heapq.heappush(pending, (-side.size, int(side[0]), count, side))

    finished.sort(key=lambda members: int(members[0]))
    for label, members in enumerate(finished):
        assignment[members] = label
    return assignment


@timed
def route_partitions(g: DependencyGraph, m: int, c: float,
                     method: SpectralMethod = SpectralMethod.exact(),
                     gap_graph: Optional[DependencyGraph] = None,
                     p_override: Optional[int] = None,
                     split_rule: SplitRule = SplitRule.MEDIAN,
                     tol: float = 1e-8, max_iter: int = 5000) -> SpectralPlan:
    """Build a spectral routing plan.

    Args:
        g: Graph whose nodes are split (temporal or spatial graph)
        m: Ensemble size (upper bound on the partition count)
        c: Constant in P = ceil(c / lambda2)
        method: Exact Lanczos or Nystrom for the gap estimate
        gap_graph: Graph on the same nodes used for lambda2 (defaults to ``g``)
        p_override: Force a fixed partition count instead of the adaptive one
        split_rule: Median (balanced) or sign split
        tol: Eigensolver residual tolerance
        max_iter: Eigensolver iteration budget

    Returns:
        SpectralPlan
    """
    if m < 1:
        raise ArgumentError(f"m must be >= 1, got {m}")
    if not c > 0:
        raise ArgumentError(f"c must be positive, got {c}")
    source = g if gap_graph is None else gap_graph
    if source.n_nodes != g.n_nodes:
        raise ArgumentError("gap_graph must be defined on the same nodes as g")

    if method.kind is MethodKind.NYSTROM:
        lambda2_hat, fiedler, _ = nystrom_fiedler(source, min(method.landmarks, source.n_nodes), method.seed)
    else:
        lambda2_hat, fiedler, _ = fiedler_pair(source, tol=tol, max_iter=max_iter)

    if p_override is not None:
        if p_override < 1:
            raise ArgumentError(f"p_override must be >= 1, got {p_override}")
        p_hat = int(p_override)
    else:
        p_hat = partition_count(lambda2_hat, c, m)
    if p_hat > g.n_nodes:
        logger.warning(f"Partition count {p_hat} exceeds n={g.n_nodes}; capping")
        p_hat = g.n_nodes

    if p_hat == 1:
        assignment = np.zeros(g.n_nodes, dtype=np.int64)
    else:
        top_vector = fiedler if source is g else None
        assignment = recursive_bisection(g, p_hat, top_vector, split_rule, tol, max_iter)
    cut_count = cut_edges(g, assignment, p_hat)
    logger.info(f"Routing plan: lambda2={lambda2_hat:.4e}, P={p_hat}, cut={cut_count}, method={method.describe()}")
    return SpectralPlan(lambda2_hat, fiedler, p_hat, assignment, cut_count, method, float(c))


def plan_frame(plan: SpectralPlan) -> pd.DataFrame:
    """Per-sample view: index, partition, fiedler_value."""
    return pd.DataFrame({
        "index": np.arange(plan.assignment.size),
        "partition": plan.assignment,
        "fiedler_value": plan.fiedler,
    })


def plan_summary(plan: SpectralPlan, seed: int) -> dict:
    return {
        "lambda2_hat": plan.lambda2_hat,
        "p_hat": plan.p_hat,
        "cut_count": plan.cut_count,
        "method": plan.method.describe(),
        "c": plan.c,
        "seed": seed,
    }


def save_plan(plan: SpectralPlan, csv_path: Union[str, Path], seed: int) -> None:
    """Write the per-sample CSV and a JSON summary next to it."""
    csv_path = Path(csv_path)
    storage.write_csv(plan_frame(plan), csv_path)
    summary_path = csv_path.with_suffix(".json")
    summary_path.write_text(json.dumps(plan_summary(plan, seed), indent=2))
