"""
Information-theoretic oracles for the AR(1) witness.

The stationary unit-variance AR(1) with coefficient lambda has Toeplitz
covariance lambda^{|i-j|} and a tridiagonal precision: 1/(1-lambda^2) at
the two endpoints, (1+lambda^2)/(1-lambda^2) in the interior and
-lambda/(1-lambda^2) off the diagonal. Coordinates are independent, so the
trajectory KL between two mean sequences is a sum of per-coordinate
quadratic forms in that precision.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve, toeplitz

from src.errors import ArgumentError, DomainError

logger = logging.getLogger("specroute.theory_oracle")

DENSE_LIMIT = 512


@dataclass(frozen=True)
class KlSpec:
    """Two AR(1) trajectory laws differing by a constant per-step mean shift."""

    n: int
    lam: float
    d0: int
    delta_mu: Tuple[float, ...]

    @classmethod
    def isotropic(cls, n: int, lam: float, d0: int, norm: float = 1.0) -> "KlSpec":
        """Shift of Euclidean norm ``norm`` spread evenly over the d0 coordinates."""
        return cls(int(n), float(lam), int(d0), tuple([norm / math.sqrt(d0)] * int(d0)))

    @classmethod
    def for_tmix(cls, n: int, t_mix: float, d0: int, norm: float = 1.0) -> "KlSpec":
        return cls.isotropic(n, 1.0 - 1.0 / t_mix, d0, norm)

    def validate(self) -> "KlSpec":
        if self.lam >= 1:
            raise DomainError(f"lambda must be < 1, got {self.lam}")
        if self.lam < 0:
            raise ArgumentError(f"lambda must be >= 0, got {self.lam}")
        if self.n < 1 or self.d0 < 1:
            raise ArgumentError(f"n and d0 must be positive, got n={self.n}, d0={self.d0}")
        if len(self.delta_mu) != self.d0:
            raise ArgumentError(f"delta_mu has {len(self.delta_mu)} entries, expected d0={self.d0}")
        return self

    @property
    def shift(self) -> np.ndarray:
        return np.asarray(self.delta_mu, dtype=float)


def precision_sum(n: int, lam: float) -> float:
    """1^T Sigma_T^{-1} 1 = [n (1 - lambda) + 2 lambda] / (1 + lambda)."""
    if lam >= 1:
        raise DomainError(f"lambda must be < 1, got {lam}")
    return (n * (1.0 - lam) + 2.0 * lam) / (1.0 + lam)


def tridiagonal_form(a: np.ndarray, b: np.ndarray, lam: float) -> float:
    """a^T Sigma_T^{-1} b using the tridiagonal AR(1) precision, O(n)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 1:
        return float(a[0] * b[0])
    scale = 1.0 / (1.0 - lam ** 2)
    diag = np.full(a.size, (1.0 + lam ** 2) * scale)
    diag[0] = diag[-1] = scale
    value = np.dot(a * diag, b) - lam * scale * (np.dot(a[:-1], b[1:]) + np.dot(a[1:], b[:-1]))
    return float(value)


def _drift_ramp(n: int, drift_nu: float) -> np.ndarray:
    return (drift_nu / n) * np.arange(n, dtype=float)


def kl_trajectory_closed(spec: KlSpec, drift_nu: float = 0.0) -> float:
    """Trajectory KL between the shifted and unshifted AR(1) laws.

    Without drift this is 0.5 * ||delta_mu||^2 * q(n, lambda). With
    ``drift_nu`` the shifted law also carries the ramp (nu/n) t on every
    coordinate, and the extra terms are evaluated through the tridiagonal
    precision.
    """
    spec.validate()
    shift = spec.shift
    kl = 0.5 * float(shift @ shift) * precision_sum(spec.n, spec.lam)
    if drift_nu:
        ramp = _drift_ramp(spec.n, drift_nu)
        ones = np.ones(spec.n)
        kl += shift.sum() * tridiagonal_form(ones, ramp, spec.lam)
        kl += 0.5 * spec.d0 * tridiagonal_form(ramp, ramp, spec.lam)
    return kl


def kl_trajectory_dense(spec: KlSpec, drift_nu: float = 0.0) -> float:
    """Brute-force KL: dense Toeplitz covariance, Cholesky solve, quadratic form."""
    spec.validate()
    if spec.n * spec.d0 > DENSE_LIMIT:
        raise ArgumentError(f"Dense oracle limited to n*d0 <= {DENSE_LIMIT}, got {spec.n * spec.d0}")
    sigma_t = toeplitz(spec.lam ** np.arange(spec.n))
    sigma = np.kron(sigma_t, np.eye(spec.d0))
    means = np.tile(spec.shift, (spec.n, 1)) + _drift_ramp(spec.n, drift_nu)[:, None]
    diff = means.ravel()
    return float(0.5 * diff @ cho_solve(cho_factor(sigma), diff))


class LeCamBound(NamedTuple):
    delta: float
    kl: float
    risk_floor: float


def lecam_separation(n: int, t_mix: float, var_rho: float, c0: float = 1.0) -> LeCamBound:
    """Two-point separation for Gaussian margin outputs.

    Delta = c0 t_mix / sqrt(n), KL = Delta^2 / (2 var_rho), and the testing
    risk floor 0.5 (1 - sqrt(KL / 2)) clipped to [0, 0.5].
    """
    if not var_rho > 0:
        raise ArgumentError(f"var_rho must be positive, got {var_rho}")
    delta = c0 * t_mix / math.sqrt(n)
    kl = delta ** 2 / (2.0 * var_rho)
    floor = float(np.clip(0.5 * (1.0 - math.sqrt(kl / 2.0)), 0.0, 0.5))
    return LeCamBound(delta, kl, floor)


def fano_budget(n: int, t_mix: float, d0: int, delta: float, c1: float = 1.0, c2: float = 1.0) -> float:
    """c1 delta (1 - (c2 (n / t_mix) delta^2 + log 2) / (d0 / 8))."""
    return c1 * delta * (1.0 - (c2 * (n / t_mix) * delta ** 2 + math.log(2.0)) / (d0 / 8.0))


def fano_maximizer(n: int, t_mix: float, d0: int, c1: float = 1.0, c2: float = 1.0,
                   grid_size: int = 4001) -> Tuple[float, float]:
    """Grid maximizer of :func:`fano_budget` over delta > 0.

    The grid spans (0, 2 sqrt(budget / a)] with a = c2 n / t_mix, so its
    resolution scales with sqrt(t_mix / n).

    Returns:
        (delta_star, bound at delta_star); (0.0, 0.0) when the bound is never positive
    """
    budget = d0 / 8.0
    a = c2 * n / t_mix
    if budget <= math.log(2.0):
        logger.warning(f"Fano budget d0/8={budget:.3f} does not exceed log 2; bound is vacuous")
        return 0.0, 0.0
    grid = np.linspace(0.0, 2.0 * math.sqrt(budget / a), grid_size)[1:]
    values = fano_budget(n, t_mix, d0, grid, c1, c2)
    best = int(np.argmax(values))
    return float(grid[best]), float(values[best])


def fano_argmax(n: int, t_mix: float, d0: int, c2: float = 1.0) -> Optional[float]:
    """Stationary point sqrt((d0/8 - log 2) / (3 c2 n / t_mix)) of the Fano bound."""
    budget = d0 / 8.0 - math.log(2.0)
    if budget <= 0:
        return None
    return math.sqrt(budget / (3.0 * c2 * n / t_mix))


def theory_grid_frame(ns: Iterable[int], t_mixes: Iterable[float], d0: int = 1, norm: float = 1.0,
                      drift_nu: float = 0.0) -> pd.DataFrame:
    """KL grid as rows (n, t_mix, lambda, value, dense_value, scaled).

    ``scaled`` is q(n, lambda) t_mix / n, which lies in [1/2, 1] once n >= 100 t_mix.
    ``dense_value`` is NaN where the dense oracle is too large.
    """
    rows = []
    for t_mix in t_mixes:
        for n in ns:
            spec = KlSpec.for_tmix(n, t_mix, d0, norm)
            value = kl_trajectory_closed(spec, drift_nu)
            dense = kl_trajectory_dense(spec, drift_nu) if n * d0 <= DENSE_LIMIT else float("nan")
            rows.append({
                "n": n,
                "t_mix": t_mix,
                "lambda": spec.lam,
                "value": value,
                "dense_value": dense,
                "scaled": precision_sum(n, spec.lam) * t_mix / n,
            })
    return pd.DataFrame(rows)


def fano_grid_frame(ns: Sequence[int], t_mixes: Sequence[float], d0: int, c1: float = 1.0,
                    c2: float = 1.0) -> pd.DataFrame:
    """Fano maximizer per (n, t_mix) with delta* / sqrt(t_mix / n)."""
    rows = []
    for t_mix in t_mixes:
        for n in ns:
            delta_star, value = fano_maximizer(n, t_mix, d0, c1, c2)
            rows.append({
                "n": n,
                "t_mix": t_mix,
                "lambda": 1.0 - 1.0 / t_mix,
                "value": value,
                "delta_star": delta_star,
                "delta_scaled": delta_star / math.sqrt(t_mix / n),
            })
    return pd.DataFrame(rows)
