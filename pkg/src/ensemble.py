"""
Majority-vote ensembles.

Base learners are depth-limited axis-aligned Gini trees or ridge-regularized
linear rules. Every learner votes +1 or -1; the ensemble margin is the mean
vote and the prediction is its sign, with sign(0) := +1.
"""

import enum
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import solve

from src.chain_sim import Trajectory, sign
from src.errors import ArgumentError, DataError, TrainingError
from src.performance import parallel_map, timed
from src.resampling import SubsampleSet
from src import storage

logger = logging.getLogger("specroute.ensemble")

MODEL_MAGIC = b"SPRTMODL"
MODEL_VERSION = 1


class LearnerKind(str, enum.Enum):
    AXIS_TREE = "axis_tree"
    LINEAR_RIDGE = "linear_ridge"


@dataclass(frozen=True)
class BaseLearnerSpec:
    kind: LearnerKind = LearnerKind.AXIS_TREE
    max_depth: int = 8
    min_leaf: int = 5
    reg: float = 1.0
    seed: int = 0

    @classmethod
    def axis_tree(cls, max_depth: int = 8, min_leaf: int = 5, seed: int = 0) -> "BaseLearnerSpec":
        return cls(LearnerKind.AXIS_TREE, max_depth=int(max_depth), min_leaf=int(min_leaf), seed=seed).validate()

    @classmethod
    def linear_ridge(cls, reg: float = 1.0, seed: int = 0) -> "BaseLearnerSpec":
        return cls(LearnerKind.LINEAR_RIDGE, reg=float(reg), seed=seed).validate()

    def validate(self) -> "BaseLearnerSpec":
        if self.max_depth < 1:
            raise ArgumentError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_leaf < 1:
            raise ArgumentError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if not self.reg > 0:
            raise ArgumentError(f"reg must be positive, got {self.reg}")
        return self

    def tag(self) -> str:
        if self.kind is LearnerKind.AXIS_TREE:
            return f"axis_tree(depth={self.max_depth},leaf={self.min_leaf})"
        return f"linear_ridge(reg={self.reg:g})"


class ConstantLearner:
    """Votes the same class everywhere (single-class subsamples)."""

    code = 0

    def __init__(self, value: int):
        self.value = 1 if value >= 0 else -1

    def score(self, x: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], float(self.value))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], self.value, dtype=np.int8)

    def to_bytes(self) -> bytes:
        return struct.pack("<b", self.value)

    @classmethod
    def from_bytes(cls, payload: bytes) -> "ConstantLearner":
        return cls(struct.unpack("<b", payload)[0])


def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int) -> Optional[Tuple[int, float, float]]:
    """Lowest weighted Gini split over all features.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values. On equal impurity the smaller threshold wins within a feature,
    then the smaller feature index.

    Returns:
        (feature, threshold, impurity) or None when no admissible split exists
    """
    n = y.size
    positive = (y > 0).astype(float)
    best = None
    for feature in range(x.shape[1]):
        order = np.argsort(x[:, feature], kind="stable")
        values = x[order, feature]
        left_pos = np.cumsum(positive[order])[:-1]
        left_n = np.arange(1, n, dtype=float)
        # a split after position i is valid only between distinct values
        valid = (values[1:] > values[:-1]) & (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not valid.any():
            continue
        right_n = n - left_n
        p_left = left_pos / left_n
        p_right = (positive.sum() - left_pos) / right_n
        impurity = (2 * left_n * p_left * (1 - p_left) + 2 * right_n * p_right * (1 - p_right)) / n
        impurity = np.where(valid, impurity, np.inf)
        pos = int(np.argmin(impurity))
        if best is None or impurity[pos] < best[2]:
            best = (feature, 0.5 * (values[pos] + values[pos + 1]), float(impurity[pos]))
    return best


class AxisTree:
    """Depth-limited binary tree with axis-aligned thresholds.

    Nodes are stored in flat arrays; ``feature == -1`` marks a leaf whose vote
    is ``value``. Samples go left when ``x[feature] <= threshold``.
    """

    code = 1

    def __init__(self, feature: np.ndarray, threshold: np.ndarray, left: np.ndarray,
                 right: np.ndarray, value: np.ndarray):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.int8)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int) -> "AxisTree":
        feature: List[int] = []
        threshold: List[float] = []
        left: List[int] = []
        right: List[int] = []
        value: List[int] = []

        def grow(rows: np.ndarray, depth: int) -> int:
            node = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(int(sign(y[rows].mean())))
            labels = y[rows]
            if depth >= max_depth or rows.size < 2 * min_leaf or np.all(labels == labels[0]):
                return node
            split = _best_split(x[rows], labels, min_leaf)
            parent = 2 * np.mean(labels > 0) * np.mean(labels < 0)
            if split is None or split[2] >= parent:
                return node
            f, thr, _ = split
            go_left = x[rows, f] <= thr
            feature[node], threshold[node] = f, thr
            left[node] = grow(rows[go_left], depth + 1)
            right[node] = grow(rows[~go_left], depth + 1)
            return node

        grow(np.arange(y.size), 0)
        return cls(feature, threshold, left, right, value)

    def _leaves(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        node = np.zeros(x.shape[0], dtype=np.int32)
        rows = np.arange(x.shape[0])
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return node
            r, nd = rows[internal], node[internal]
            go_left = x[r, f[internal]] <= self.threshold[nd]
            node[internal] = np.where(go_left, self.left[nd], self.right[nd])

    def score(self, x: np.ndarray) -> np.ndarray:
        return self.value[self._leaves(x)].astype(float)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self._leaves(x)]

    def to_bytes(self) -> bytes:
        return (
            struct.pack("<I", self.n_nodes)
            + self.feature.astype("<i4").tobytes()
            + self.threshold.astype("<f8").tobytes()
            + self.left.astype("<i4").tobytes()
            + self.right.astype("<i4").tobytes()
            + self.value.astype("i1").tobytes()
        )

    @classmethod
    def from_bytes(cls, payload: bytes) -> "AxisTree":
        (k,) = struct.unpack_from("<I", payload)
        offset = 4
        arrays = []
        for dtype in ("<i4", "<f8", "<i4", "<i4", "i1"):
            dt = np.dtype(dtype)
            arrays.append(np.frombuffer(payload, dtype=dt, count=k, offset=offset).copy())
            offset += k * dt.itemsize
        return cls(*arrays)


class LinearRidge:
    """Ridge least squares of y on [1, x] with an unpenalized intercept; votes sign of the score."""

    code = 2

    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=float)

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray, reg: float) -> "LinearRidge":
        design = np.hstack([np.ones((x.shape[0], 1)), x])
        penalty = np.full(design.shape[1], reg)
        penalty[0] = 0.0
        gram = design.T @ design + np.diag(penalty)
        return cls(solve(gram, design.T @ y.astype(float), assume_a="sym"))

    def score(self, x: np.ndarray) -> np.ndarray:
        return self.weights[0] + np.atleast_2d(x) @ self.weights[1:]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return sign(self.score(x))

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.weights.size) + self.weights.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "LinearRidge":
        (k,) = struct.unpack_from("<I", payload)
        return cls(np.frombuffer(payload, dtype="<f8", count=k, offset=4).copy())


_LEARNER_TYPES = {cls.code: cls for cls in (ConstantLearner, AxisTree, LinearRidge)}


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    """Trained learners with majority-vote aggregation.

    ``family`` is the data-generating law the model was trained on
    (ChainConfig.family_key), checked against evaluation data.
    """

    learners: List[Any]
    scheme_tag: str
    spec: BaseLearnerSpec
    family: Dict[str, Any] = field(default_factory=dict)
    d0: int = 1

    @property
    def m(self) -> int:
        return len(self.learners)

    def votes(self, x: np.ndarray) -> np.ndarray:
        """(m, n_points) matrix of +-1 learner outputs."""
        x = np.atleast_2d(x)
        if x.shape[1] != self.d0:
            raise ArgumentError(f"Expected {self.d0} features, got {x.shape[1]}")
        return np.vstack([learner.predict(x) for learner in self.learners])

    def margins(self, x: np.ndarray) -> np.ndarray:
        return self.votes(x).mean(axis=0)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return sign(self.margins(x))


def fit_learner(x: np.ndarray, y: np.ndarray, spec: BaseLearnerSpec):
    """Fit one base learner on an already-resampled training set."""
    if y.size == 0:
        raise TrainingError("Cannot train a learner on an empty subsample")
    if np.all(y == y[0]):
        return ConstantLearner(int(y[0]))
    if spec.kind is LearnerKind.AXIS_TREE:
        return AxisTree.fit(x, y, spec.max_depth, spec.min_leaf)
    return LinearRidge.fit(x, y, spec.reg)


def _fit_task(task: Tuple[np.ndarray, np.ndarray, BaseLearnerSpec]):
    return fit_learner(*task)


@timed
def train(traj: Trajectory, subs: SubsampleSet, spec: BaseLearnerSpec, threads: int = 1) -> EnsembleModel:
    """Train one learner per index multiset of ``subs``.

    Args:
        traj: Training trajectory
        subs: Per-learner index multisets over ``traj``
        spec: Base learner family
        threads: Worker processes for fitting

    Returns:
        EnsembleModel with ``subs.m`` learners
    """
    spec.validate()
    if subs.n != traj.n:
        raise ArgumentError(f"SubsampleSet is over n={subs.n} but trajectory has n={traj.n}")
    x, y = np.asarray(traj.x), np.asarray(traj.y)
    tasks = [(x[idx], y[idx], spec) for idx in subs.per_learner]
    learners = parallel_map(_fit_task, tasks, max_workers=threads)
    logger.debug(f"Trained {len(learners)} {spec.tag()} learners on {subs.scheme.tag()}")
    return EnsembleModel(learners, subs.scheme.tag(), spec, traj.config.family_key(), traj.x.shape[1])


def margin(model: EnsembleModel, x: np.ndarray) -> float:
    """Mean vote rho(x) in [-1, 1] at a single feature vector."""
    return float(model.margins(np.reshape(x, (1, -1)))[0])


def predict(model: EnsembleModel, x: np.ndarray) -> int:
    """Majority-vote prediction at a single feature vector, sign(0) := +1."""
    return int(sign(margin(model, x)))


def save_model(model: EnsembleModel, path: Union[str, Path]) -> None:
    """Write a model as: magic, version, JSON header, then one record per learner
    (type code, payload length, payload)."""
    header = json.dumps({
        "scheme_tag": model.scheme_tag,
        "spec": {
            "kind": model.spec.kind.value, "max_depth": model.spec.max_depth,
            "min_leaf": model.spec.min_leaf, "reg": model.spec.reg, "seed": model.spec.seed,
        },
        "family": model.family,
        "d0": model.d0,
        "m": model.m,
    }, sort_keys=True).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<HI", MODEL_VERSION, len(header)), header]
    for learner in model.learners:
        payload = learner.to_bytes()
        parts.append(struct.pack("<BI", learner.code, len(payload)))
        parts.append(payload)
    storage.write_bytes(path, b"".join(parts))
    logger.info(f"Saved {model.m}-learner model to {path}")


def load_model(path: Union[str, Path]) -> EnsembleModel:
    """Read a model written by :func:`save_model`."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MODEL_MAGIC):
        raise DataError(f"{path} is not a model file")
    offset = len(MODEL_MAGIC)
    version, header_len = struct.unpack_from("<HI", raw, offset)
    if version != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    offset += struct.calcsize("<HI")
    header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    offset += header_len

    learners = []
    for _ in range(header["m"]):
        code, length = struct.unpack_from("<BI", raw, offset)
        offset += struct.calcsize("<BI")
        learners.append(_LEARNER_TYPES[code].from_bytes(raw[offset:offset + length]))
        offset += length
    spec_fields = dict(header["spec"], kind=LearnerKind(header["spec"]["kind"]))
    return EnsembleModel(learners, header["scheme_tag"], BaseLearnerSpec(**spec_fields),
                         header["family"], int(header["d0"]))


def predict_frame(model: EnsembleModel, frame: pd.DataFrame) -> pd.DataFrame:
    """Margins and predictions for a feature table with columns x0..x{d-1}."""
    columns = [f"x{j}" for j in range(model.d0)]
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"Feature table is missing columns {missing}")
    x = frame[columns].to_numpy(dtype=float)
    rho = model.margins(x)
    return pd.DataFrame({"index": np.arange(x.shape[0]), "margin": rho, "prediction": sign(rho)})
