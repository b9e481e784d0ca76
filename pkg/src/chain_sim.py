"""
Synthetic dependent datasets.

Generators for the Gaussian AR(1) witness (optionally with a linear mean
drift), separable 2D lattice fields, held-out stationary evaluation draws,
the Monte-Carlo Bayes risk, and mixing diagnostics.
"""

import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from src.errors import ConfigurationError, ArgumentError
from src.seeding import stream
from src import storage

logger = logging.getLogger("specroute.chain_sim")

MIN_MC_DRAWS = 10_000


class TopologyKind(str, enum.Enum):
    PATH1D = "path1d"
    LATTICE2D = "lattice2d"


@dataclass(frozen=True)
class Topology:
    """Index topology of a trajectory: a 1D path or a row-major 2D lattice."""

    kind: TopologyKind = TopologyKind.PATH1D
    side: Optional[int] = None
    s_dim: int = 1

    @classmethod
    def path(cls) -> "Topology":
        return cls(TopologyKind.PATH1D, None, 1)

    @classmethod
    def lattice(cls, side: int) -> "Topology":
        return cls(TopologyKind.LATTICE2D, int(side), 2)

    @property
    def is_lattice(self) -> bool:
        return self.kind is TopologyKind.LATTICE2D

    def cell(self, index: int) -> Tuple[int, int]:
        """Grid cell of a row-major index (lattices only)."""
        if not self.is_lattice:
            raise ArgumentError("cell() is only defined for Lattice2D")
        return divmod(int(index), self.side)

    def tag(self) -> str:
        return f"lattice2d:{self.side}" if self.is_lattice else "path1d"

    @classmethod
    def from_tag(cls, tag: str) -> "Topology":
        if tag == "path1d":
            return cls.path()
        if tag.startswith("lattice2d:"):
            return cls.lattice(int(tag.split(":", 1)[1]))
        raise ConfigurationError(f"Unknown topology tag: {tag!r}")


@dataclass(frozen=True)
class ChainConfig:
    """Parameters of a dependent witness process.

    ``v`` defaults to the all-ones direction of length ``d0``.
    """

    t_mix: int
    d0: int
    n: int
    delta: float = 0.0
    v: Optional[Tuple[int, ...]] = None
    eta_std: float = 1.0
    drift_nu: float = 0.0
    topology: Topology = field(default_factory=Topology.path)
    seed: int = 0

    def __post_init__(self):
        if self.v is None:
            object.__setattr__(self, "v", tuple([1] * int(self.d0)))
        else:
            object.__setattr__(self, "v", tuple(int(s) for s in self.v))

    @property
    def lam(self) -> float:
        """Autoregression coefficient 1 - 1/t_mix."""
        return 1.0 - 1.0 / self.t_mix

    @property
    def direction(self) -> np.ndarray:
        return np.asarray(self.v, dtype=float)

    @property
    def mu_v(self) -> np.ndarray:
        """Per-step mean shift delta * v / ||v|| (so ||mu_v|| = delta)."""
        v = self.direction
        return self.delta * v / np.linalg.norm(v)

    def validate(self) -> "ChainConfig":
        """Raise ConfigurationError on any violated invariant; return self."""
        if int(self.t_mix) != self.t_mix or self.t_mix < 1:
            raise ConfigurationError(f"t_mix must be a positive integer, got {self.t_mix}")
        if self.n < 2:
            raise ConfigurationError(f"n must be at least 2, got {self.n}")
        if self.d0 < 1:
            raise ConfigurationError(f"d0 must be positive, got {self.d0}")
        if not self.eta_std > 0:
            raise ConfigurationError(f"eta_std must be positive, got {self.eta_std}")
        if self.delta < 0 or self.drift_nu < 0:
            raise ConfigurationError("delta and drift_nu must be nonnegative")
        if len(self.v) != self.d0 or any(s not in (-1, 1) for s in self.v):
            raise ConfigurationError("v must be a sign vector of length d0")
        if self.topology.is_lattice and self.topology.side ** 2 != self.n:
            raise ConfigurationError(
                f"Lattice2D side {self.topology.side} requires n = {self.topology.side ** 2}, got {self.n}"
            )
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        return self

    def family_key(self) -> Dict[str, Any]:
        """Identity of the data-generating law, ignoring seed, length and topology."""
        return {
            "t_mix": self.t_mix,
            "d0": self.d0,
            "delta": self.delta,
            "v": list(self.v),
            "eta_std": self.eta_std,
        }

    def to_header(self) -> Dict[str, str]:
        return {
            "t_mix": str(self.t_mix),
            "d0": str(self.d0),
            "n": str(self.n),
            "delta": repr(float(self.delta)),
            "v": ",".join(str(s) for s in self.v),
            "eta_std": repr(float(self.eta_std)),
            "drift_nu": repr(float(self.drift_nu)),
            "topology": self.topology.tag(),
            "seed": str(self.seed),
        }

    @classmethod
    def from_header(cls, header: Dict[str, str]) -> "ChainConfig":
        return cls(
            t_mix=int(header["t_mix"]),
            d0=int(header["d0"]),
            n=int(header["n"]),
            delta=float(header["delta"]),
            v=tuple(int(s) for s in header["v"].split(",")),
            eta_std=float(header["eta_std"]),
            drift_nu=float(header["drift_nu"]),
            topology=Topology.from_tag(header["topology"]),
            seed=int(header["seed"]),
        )


@dataclass(frozen=True)
class Trajectory:
    """Realized samples: features x (n x d0), labels y in {-1, +1}, latent xi."""

    x: np.ndarray
    y: np.ndarray
    config: ChainConfig
    topology: Topology
    xi: Optional[np.ndarray] = None

    def __post_init__(self):
        for array in (self.x, self.y, self.xi):
            if array is not None:
                array.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


class BayesRisk(NamedTuple):
    value: float
    se: float


def sign(values: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) := +1, as int8."""
    return np.where(np.asarray(values) >= 0, 1, -1).astype(np.int8)


def _labels(config: ChainConfig, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    eta = rng.normal(0.0, config.eta_std, size=x.shape[0])
    return sign(x @ config.direction + eta)


def _ar1_filter(noise: np.ndarray, rho: float, axis: int = 0) -> np.ndarray:
    """Stationary unit-variance AR(1) along ``axis``: the first slice is the
    stationary draw, then z_t = rho z_{t-1} + sqrt(1 - rho^2) w_t."""
    noise = np.moveaxis(noise, axis, 0)
    first = noise[:1]
    if noise.shape[0] == 1 or rho == 0.0:
        out = noise.copy()
    else:
        zi = rho * first
        rest, _ = lfilter([np.sqrt(1.0 - rho ** 2)], [1.0, -rho], noise[1:], axis=0, zi=zi)
        out = np.concatenate([first, rest], axis=0)
    return np.moveaxis(out, 0, axis)


def generate_ar1(config: ChainConfig) -> Trajectory:
    """Generate the AR(1) witness trajectory for a Path1D config.

    Args:
        config: Validated ChainConfig with Path1D topology

    Returns:
        Trajectory with X_t = mu_v + drift_t + xi_t and Y_t = sign(<v, X_t> + eta_t)
    """
    config.validate()
    if config.topology.is_lattice:
        raise ConfigurationError("generate_ar1 requires Path1D topology")

    rng = stream(config.seed, "chain")
    noise = rng.standard_normal((config.n, config.d0))
    xi = _ar1_filter(noise, config.lam)

    t = np.arange(config.n, dtype=float)
    drift = (config.drift_nu / config.n) * t[:, None] * np.ones(config.d0)
    x = config.mu_v + drift + xi
    y = _labels(config, x, rng)
    logger.debug(f"Generated AR(1) trajectory n={config.n} d0={config.d0} lambda={config.lam:.4f}")
    return Trajectory(x=x, y=y, config=config, topology=config.topology, xi=xi)


def generate_lattice(config: ChainConfig) -> Trajectory:
    """Generate a separable 2D Gauss-Markov field on a side x side lattice.

    The latent field is swept by a stationary AR(1) recursion down the rows
    and then across the columns with coefficient 1 - 1/t_mix per axis, so
    the per-axis correlation decays geometrically with length ~ t_mix cells.
    Index i maps to cell (i div side, i mod side).
    """
    config.validate()
    if not config.topology.is_lattice:
        raise ConfigurationError("generate_lattice requires Lattice2D topology")

    side = config.topology.side
    rng = stream(config.seed, "chain")
    noise = rng.standard_normal((side, side, config.d0))
    field_ = _ar1_filter(_ar1_filter(noise, config.lam, axis=0), config.lam, axis=1)
    xi = field_.reshape(config.n, config.d0)

    x = config.mu_v + xi
    y = _labels(config, x, rng)
    return Trajectory(x=x, y=y, config=config, topology=config.topology, xi=xi)


def generate(config: ChainConfig) -> Trajectory:
    """Dispatch on topology."""
    if config.topology.is_lattice:
        return generate_lattice(config)
    return generate_ar1(config)


def generate_eval(config: ChainConfig, n_eval: int, seed: int) -> Trajectory:
    """Draw an independent held-out sample from the stationary law of ``config``.

    The evaluation draws are i.i.d. from the stationary marginal (mean mu_v,
    identity covariance), which is the law the risk is defined under.
    """
    eval_config = replace(config, n=int(n_eval), seed=int(seed), drift_nu=0.0, topology=Topology.path())
    eval_config.validate()
    rng = stream(eval_config.seed, "eval")
    xi = rng.standard_normal((eval_config.n, eval_config.d0))
    x = eval_config.mu_v + xi
    y = _labels(eval_config, x, rng)
    return Trajectory(x=x, y=y, config=eval_config, topology=eval_config.topology, xi=xi)


def bayes_rule(config: ChainConfig):
    """Return the Bayes classifier x -> sign(<v, x>) for the witness family."""
    direction = config.direction

    def predict(x: np.ndarray) -> np.ndarray:
        return sign(np.atleast_2d(x) @ direction)

    return predict


def bayes_risk_oracle(config: ChainConfig, mc_draws: int, seed: Optional[int] = None) -> BayesRisk:
    """Monte-Carlo estimate of R* = Pr[sign(<v,X> + eta) != sign(<v,X>)].

    Args:
        config: Chain configuration (stationary law is used)
        mc_draws: Number of draws, at least 10^4
        seed: Optional seed for the draws (defaults to config.seed)

    Returns:
        BayesRisk(value, se) with binomial standard error
    """
    config.validate()
    if mc_draws < MIN_MC_DRAWS:
        raise ArgumentError(f"mc_draws must be at least {MIN_MC_DRAWS}, got {mc_draws}")

    rng = stream(config.seed if seed is None else seed, "bayes")
    x = config.mu_v + rng.standard_normal((mc_draws, config.d0))
    score = x @ config.direction
    eta = rng.normal(0.0, config.eta_std, size=mc_draws)
    p = float(np.mean(sign(score + eta) != sign(score)))
    return BayesRisk(p, float(np.sqrt(max(p * (1.0 - p), 0.0) / mc_draws)))


def autocorrelation(x: np.ndarray, max_lag: Optional[int] = None) -> np.ndarray:
    """Sample autocorrelation of a 1D series via FFT, lags 0..max_lag."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if max_lag is None:
        max_lag = n // 3
    centered = x - x.mean()
    spectrum = np.fft.rfft(centered, n=2 * n)
    acov = np.fft.irfft(spectrum * np.conjugate(spectrum), n=2 * n)[:n] / n
    if acov[0] == 0:
        return np.zeros(max_lag + 1)
    return acov[: max_lag + 1] / acov[0]


def integrated_autocorr_time(x: np.ndarray, max_lag: Optional[int] = None) -> float:
    """Integrated autocorrelation time 1/2 + sum of rho_k up to the first zero crossing.

    For an AR(1) with coefficient lambda the population value is
    (1 + lambda) / (2 (1 - lambda)), i.e. about t_mix for lambda = 1 - 1/t_mix.
    """
    rho = autocorrelation(x, max_lag)
    tau = 0.5
    for value in rho[1:]:
        if value <= 0:
            break
        tau += value
    return float(tau)


def save_trajectory(traj: Trajectory, path: Union[str, Path]) -> None:
    """Write a trajectory to the columnar binary format."""
    storage.write_columnar(path, traj.config.to_header(), {"x": traj.x, "y": traj.y})


def load_trajectory(path: Union[str, Path]) -> Trajectory:
    """Read a trajectory written by :func:`save_trajectory`."""
    header, columns = storage.read_columnar(path)
    config = ChainConfig.from_header(header)
    return Trajectory(
        x=columns["x"].astype(float),
        y=columns["y"].astype(np.int8),
        config=config,
        topology=config.topology,
    )


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """Tabular view of a trajectory (index, x0..x{d-1}, y) for CSV export."""
    frame = pd.DataFrame(traj.x, columns=[f"x{j}" for j in range(traj.x.shape[1])])
    frame.insert(0, "index", np.arange(traj.n))
    frame["y"] = traj.y
    return frame
