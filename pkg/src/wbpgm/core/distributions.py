"""Distribution primitives and conjugate updates.

All densities are evaluated in log space.  Value types are immutable: array
fields are copied on construction and marked read-only.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import singledispatch
from typing import Union

import numpy as np
from scipy.special import gammaln, logsumexp, multigammaln

NORM_TOL = 1e-9
SYM_TOL = 1e-9


class DomainError(ValueError):
    """A point lies outside the support of a distribution."""


class DimensionError(ValueError):
    """Sufficient statistics do not match the prior's dimension."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def is_spd(matrix: np.ndarray) -> bool:
    """SPD test by attempted Cholesky factorization (plus a symmetry check)."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    if not np.allclose(m, m.T, atol=SYM_TOL, rtol=0.0):
        return False
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True, eq=False)
class CategoricalDist:
    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("categorical needs a non-empty probability vector")
        total = p.sum()
        if not np.isfinite(total) or p.min() < 0:
            raise ValueError("categorical probabilities must be finite and >= 0")
        if abs(total - 1.0) > NORM_TOL:
            raise ValueError(f"categorical probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def K(self) -> int:
        return self.probs.size

    @classmethod
    def from_weights(cls, weights) -> "CategoricalDist":
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > 0:
            raise ValueError("weights have no positive mass")
        return cls(w / total)

    @classmethod
    def from_log_weights(cls, log_weights) -> "CategoricalDist":
        return cls(normalize_log(log_weights))

    @classmethod
    def uniform(cls, K: int) -> "CategoricalDist":
        return cls(np.full(K, 1.0 / K))

    @classmethod
    def point_mass(cls, K: int, k: int) -> "CategoricalDist":
        p = np.zeros(K)
        p[k] = 1.0
        return cls(p)

    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)

    def __eq__(self, other):
        return isinstance(other, CategoricalDist) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())


@dataclass(frozen=True, eq=False)
class DirichletParams:
    alpha: np.ndarray

    def __post_init__(self):
        a = _frozen(self.alpha)
        if a.ndim != 1 or a.size < 1 or np.any(~(a > 0)) or not np.all(np.isfinite(a)):
            raise ValueError("Dirichlet concentrations must be finite and > 0")
        object.__setattr__(self, "alpha", a)

    @property
    def K(self) -> int:
        return self.alpha.size

    def mean(self) -> np.ndarray:
        return self.alpha / self.alpha.sum()

    def __eq__(self, other):
        return isinstance(other, DirichletParams) and np.array_equal(self.alpha, other.alpha)


@dataclass(frozen=True, eq=False)
class GaussianParams:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mu = _frozen(np.atleast_1d(self.mean))
        cov = _frozen(np.atleast_2d(self.covariance))
        if mu.ndim != 1 or cov.shape != (mu.size, mu.size):
            raise ValueError("covariance must be D x D for a D-dimensional mean")
        if not is_spd(cov):
            raise ValueError("covariance must be symmetric positive definite")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)

    @property
    def D(self) -> int:
        return self.mean.size

    def __eq__(self, other):
        return (isinstance(other, GaussianParams) and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.covariance, other.covariance))


@dataclass(frozen=True, eq=False)
class NiwParams:
    """Normal-inverse-Wishart prior over a Gaussian's mean and covariance."""

    mean0: np.ndarray
    kappa: float
    dof: float
    scale: np.ndarray

    def __post_init__(self):
        mu = _frozen(np.atleast_1d(self.mean0))
        psi = _frozen(np.atleast_2d(self.scale))
        D = mu.size
        if psi.shape != (D, D):
            raise ValueError("scale matrix must be D x D")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if not self.dof > D - 1:
            raise ValueError("dof must exceed D - 1")
        if not is_spd(psi):
            raise ValueError("scale matrix must be symmetric positive definite")
        object.__setattr__(self, "mean0", mu)
        object.__setattr__(self, "scale", psi)
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "dof", float(self.dof))

    @property
    def D(self) -> int:
        return self.mean0.size

    def __eq__(self, other):
        return (isinstance(other, NiwParams) and np.array_equal(self.mean0, other.mean0)
                and self.kappa == other.kappa and self.dof == other.dof
                and np.array_equal(self.scale, other.scale))


@dataclass(frozen=True, eq=False)
class GaussianStats:
    """Sufficient statistics of a batch of D-dimensional points."""

    n: int
    total: np.ndarray
    outer: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "total", _frozen(np.atleast_1d(self.total)))
        object.__setattr__(self, "outer", _frozen(np.atleast_2d(self.outer)))

    @classmethod
    def from_data(cls, data) -> "GaussianStats":
        x = np.asarray(data, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return cls(x.shape[0], x.sum(axis=0), x.T @ x)

    @classmethod
    def empty(cls, D: int) -> "GaussianStats":
        return cls(0, np.zeros(D), np.zeros((D, D)))

    def __add__(self, other: "GaussianStats") -> "GaussianStats":
        return GaussianStats(self.n + other.n, self.total + other.total, self.outer + other.outer)


Distribution = Union[CategoricalDist, GaussianParams, DirichletParams]


def normalize_log(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    m = lw.max()
    if not np.isfinite(m):
        raise ValueError("log weights have no finite mass")
    p = np.exp(lw - m)
    return p / p.sum()


@singledispatch
def log_density(dist, x) -> float:
    raise TypeError(f"no log density for {type(dist).__name__}")


@log_density.register
def _(dist: CategoricalDist, x) -> float:
    if isinstance(x, (bool, np.bool_)) or int(x) != x or not 0 <= int(x) < dist.K:
        raise DomainError(f"{x!r} is not a category index in [0, {dist.K})")
    p = dist.probs[int(x)]
    return float(np.log(p)) if p > 0 else -np.inf


@log_density.register
def _(dist: GaussianParams, x) -> float:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.shape != (dist.D,) or not np.all(np.isfinite(v)):
        raise DomainError(f"point must be a finite vector of length {dist.D}")
    L = np.linalg.cholesky(dist.covariance)
    z = np.linalg.solve(L, v - dist.mean)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(-0.5 * (dist.D * np.log(2 * np.pi) + logdet + z @ z))


@log_density.register
def _(dist: DirichletParams, x) -> float:
    v = np.asarray(x, dtype=float)
    if v.shape != (dist.K,) or np.any(v <= 0) or abs(v.sum() - 1.0) > NORM_TOL:
        raise DomainError("point must lie in the open probability simplex")
    a = dist.alpha
    log_norm = gammaln(a.sum()) - gammaln(a).sum()
    return float(log_norm + ((a - 1.0) * np.log(v)).sum())


def _as_stats(prior: NiwParams, data) -> GaussianStats:
    if isinstance(data, GaussianStats):
        stats = data
    else:
        x = np.asarray(data, dtype=float)
        if x.size == 0:
            return GaussianStats.empty(prior.D)
        if x.ndim == 1:
            x = x[:, None] if prior.D == 1 else x[None, :]
        stats = GaussianStats.from_data(x)
    if stats.total.shape != (prior.D,):
        raise DimensionError(f"data dimension {stats.total.shape} != prior dimension {prior.D}")
    return stats


def posterior_update(prior, data):
    """Conjugate posterior of ``prior`` after observing ``data``.

    Dirichlet priors take a count vector.  NIW priors take either a
    :class:`GaussianStats` or an ``N x D`` data matrix.
    """
    if isinstance(prior, DirichletParams):
        counts = np.asarray(data, dtype=float)
        if counts.shape != prior.alpha.shape:
            raise DimensionError(f"count vector shape {counts.shape} != {prior.alpha.shape}")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        return DirichletParams(prior.alpha + counts)
    if isinstance(prior, NiwParams):
        s = _as_stats(prior, data)
        if s.n == 0:
            return prior
        kappa_n = prior.kappa + s.n
        weighted = prior.kappa * prior.mean0 + s.total
        mean_n = weighted / kappa_n
        scale_n = (prior.scale + s.outer + prior.kappa * np.outer(prior.mean0, prior.mean0)
                   - kappa_n * np.outer(mean_n, mean_n))
        scale_n = 0.5 * (scale_n + scale_n.T)
        return NiwParams(mean_n, kappa_n, prior.dof + s.n, scale_n)
    raise TypeError(f"no conjugate update for {type(prior).__name__}")


def niw_log_predictive(niw: NiwParams, x) -> float:
    """Log posterior-predictive density (multivariate Student-t) at ``x``."""
    D = niw.D
    v = np.atleast_1d(np.asarray(x, dtype=float))
    nu = niw.dof - D + 1.0
    shape = niw.scale * (niw.kappa + 1.0) / (niw.kappa * nu)
    L = np.linalg.cholesky(shape)
    z = np.linalg.solve(L, v - niw.mean0)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(gammaln((nu + D) / 2.0) - gammaln(nu / 2.0) - 0.5 * D * np.log(nu * np.pi)
                 - 0.5 * logdet - 0.5 * (nu + D) * np.log1p(z @ z / nu))


def niw_expected_gaussian(niw: NiwParams) -> GaussianParams:
    """Posterior-mean Gaussian (mean, E[covariance]) under an NIW."""
    D = niw.D
    denom = niw.dof - D - 1.0
    cov = niw.scale / denom if denom > 0 else niw.scale / max(niw.dof, 1.0)
    return GaussianParams(niw.mean0, cov)


def entropy(p) -> float:
    p = np.asarray(p, dtype=float)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def kl_divergence(p, q) -> float:
    """KL[p || q]; +inf when q has zeros where p has mass."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    nz = p > 0
    if np.any(q[nz] <= 0):
        return float("inf")
    return float((p[nz] * (np.log(p[nz]) - np.log(q[nz]))).sum())


def symmetric_kl(p, q) -> float:
    return kl_divergence(p, q) + kl_divergence(q, p)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


__all__ = [
    "CategoricalDist", "DirichletParams", "GaussianParams", "NiwParams", "GaussianStats",
    "DomainError", "DimensionError", "log_density", "posterior_update", "normalize_log",
    "niw_log_predictive", "niw_expected_gaussian", "is_spd", "entropy", "kl_divergence",
    "symmetric_kl", "total_variation", "logsumexp",
]
