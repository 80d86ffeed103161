"""Gaussian mixture with collapsed Gibbs sampling.

Component parameters are integrated out under a normal-inverse-Wishart prior
and mixing weights under a symmetric Dirichlet, so each assignment is drawn
from ``p(z_i = k | z_-i, x) ∝ (n_k + a_k) * t_k(x_i)`` where ``t_k`` is the
Student-t predictive of component ``k`` without datum ``i``.  Optionally the
component Gaussians can be fixed, leaving only the weights collapsed.
"""
from __future__ import annotations

import math

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln, multigammaln

from ..core.distributions import (CategoricalDist, DirichletParams, GaussianParams, GaussianStats,
                                  NiwParams, posterior_update)
from ..rng import draw_categorical
from ..serket import ItemCategoricalEndpoint


class GmmError(ValueError):
    pass


def _predictive(prior: NiwParams, stats: GaussianStats) -> tuple:
    """(mean, inverse Cholesky factor, dof, log-normalizer) of the Student-t predictive."""
    D = prior.D
    kappa = prior.kappa + stats.n
    mean = (prior.kappa * prior.mean0 + stats.total) / kappa
    scale = (prior.scale + stats.outer + prior.kappa * np.outer(prior.mean0, prior.mean0)
             - kappa * np.outer(mean, mean))
    nu = prior.dof + stats.n - D + 1.0
    L = np.linalg.cholesky(0.5 * (scale + scale.T) * (kappa + 1.0) / (kappa * nu))
    const = (math.lgamma((nu + D) / 2.0) - math.lgamma(nu / 2.0) - 0.5 * D * math.log(nu * math.pi)
             - float(np.log(L.diagonal()).sum()))
    return mean, np.linalg.inv(L), nu, const


class _PredictiveTable:
    """Stacked Student-t predictives for all components, evaluated in one shot."""

    def __init__(self, prior: NiwParams, stats: list):
        self.prior = prior
        parts = [_predictive(prior, s) for s in stats]
        self.mean = np.array([p[0] for p in parts])
        self.linv = np.array([p[1] for p in parts])
        self.nu = np.array([p[2] for p in parts])
        self.const = np.array([p[3] for p in parts])

    def set(self, k: int, part: tuple) -> None:
        self.mean[k], self.linv[k], self.nu[k], self.const[k] = part

    def get(self, k: int) -> tuple:
        return self.mean[k].copy(), self.linv[k].copy(), float(self.nu[k]), float(self.const[k])

    def log_pdf(self, x: np.ndarray, override=None) -> np.ndarray:
        """Log densities at ``x``; ``override=(k, part)`` swaps one component temporarily."""
        mean, linv, nu, const = self.mean, self.linv, self.nu, self.const
        if override is not None:
            k, part = override
            mean, linv, nu, const = mean.copy(), linv.copy(), nu.copy(), const.copy()
            mean[k], linv[k], nu[k], const[k] = part
        z = np.einsum("kij,kj->ki", linv, x - mean)
        D = x.size
        return const - 0.5 * (nu + D) * np.log1p((z * z).sum(axis=1) / nu)


def _as_matrix(data) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise GmmError("data must be a non-empty N x D matrix")
    return x


@dataclass(eq=False)
class GmmState:
    K: int
    prior: NiwParams
    weight_prior: DirichletParams
    data: np.ndarray
    assignments: np.ndarray
    known: Optional[tuple] = None  # fixed GaussianParams per component
    messages: np.ndarray = None  # N x K incoming log-factors
    stats: list = field(default_factory=list)
    _counts: np.ndarray = field(default=None, repr=False)
    _table: Optional[_PredictiveTable] = field(default=None, repr=False)
    _known_ll: Optional[np.ndarray] = field(default=None, repr=False)
    _version: int = field(default=0, repr=False)
    _removed_cache: tuple = field(default=(None, None, None), repr=False)

    def __post_init__(self):
        self.data = _as_matrix(self.data)
        N, D = self.data.shape
        if D != self.prior.D:
            raise GmmError(f"data dimension {D} != prior dimension {self.prior.D}")
        if self.weight_prior.K != self.K:
            raise GmmError("weight prior size must equal K")
        self.assignments = np.asarray(self.assignments, dtype=int).copy()
        if self.assignments.shape != (N,) or np.any(self.assignments < 0) or np.any(self.assignments >= self.K):
            raise GmmError("assignments must be N indices in [0, K)")
        if self.messages is None:
            self.messages = np.zeros((N, self.K))
        if self.known is not None:
            if len(self.known) != self.K:
                raise GmmError("need exactly K known components")
            self._known_ll = np.column_stack([_gauss_ll(self.data, g) for g in self.known])
        self.refresh()

    @property
    def N(self) -> int:
        return self.data.shape[0]

    def counts(self) -> np.ndarray:
        return self._counts.copy()

    def component_stats(self, k: int) -> GaussianStats:
        return GaussianStats.from_data(self.data[self.assignments == k])

    def refresh(self) -> None:
        """Rebuild all cached statistics from the assignments."""
        self._version += 1
        self._counts = np.bincount(self.assignments, minlength=self.K)
        self.stats = [self.component_stats(k) for k in range(self.K)]
        self._table = None if self._known_ll is not None else _PredictiveTable(self.prior, self.stats)

    def component_posteriors(self) -> list:
        return [posterior_update(self.prior, s) for s in self.stats]

    def cache_consistent(self) -> bool:
        if not np.array_equal(self._counts, np.bincount(self.assignments, minlength=self.K)):
            return False
        for k in range(self.K):
            ref = self.component_stats(k)
            s = self.stats[k]
            if not (s.n == ref.n and np.array_equal(s.total, ref.total) and np.array_equal(s.outer, ref.outer)):
                return False
        return True


def _gauss_ll(x: np.ndarray, g: GaussianParams) -> np.ndarray:
    L = np.linalg.cholesky(g.covariance)
    z = np.linalg.solve(L, (x - g.mean).T)
    D = x.shape[1]
    return -0.5 * (z * z).sum(axis=0) - np.log(np.diag(L)).sum() - 0.5 * D * np.log(2 * np.pi)


def init_gmm(data, K: int, prior: NiwParams, weight_alpha=1.0, rng=None, known=None,
             assignments=None) -> GmmState:
    """Initial state with assignments drawn uniformly from ``rng`` (or given explicitly)."""
    x = _as_matrix(data)
    if K < 1:
        raise GmmError("K must be >= 1")
    if assignments is None:
        if rng is None:
            raise GmmError("need an rng or explicit assignments")
        assignments = rng.integers(K, size=x.shape[0])
    alpha = np.full(K, float(weight_alpha)) if np.isscalar(weight_alpha) else np.asarray(weight_alpha, float)
    return GmmState(K, prior, DirichletParams(alpha), x, assignments,
                    known=None if known is None else tuple(known))


def _removed(state: GmmState, i: int):
    """Predictive of datum ``i``'s own component with ``i`` left out, as ``(k, part)``."""
    if state._known_ll is not None:
        return None
    ci, cv, cached = state._removed_cache
    if ci == i and cv == state._version:
        return cached
    k = state.assignments[i]
    mask = state.assignments == k
    mask[i] = False
    out = k, _predictive(state.prior, GaussianStats.from_data(state.data[mask]))
    state._removed_cache = (i, state._version, out)
    return out


def _log_conditional(state: GmmState, i: int, removed) -> np.ndarray:
    counts = state._counts.astype(float)
    counts[state.assignments[i]] -= 1
    lw = np.log(counts + state.weight_prior.alpha)
    if state._known_ll is not None:
        return lw + state._known_ll[i]
    return lw + state._table.log_pdf(state.data[i], removed)


def gmm_full_conditional(state: GmmState, i: int) -> np.ndarray:
    """Log full conditional of assignment ``i`` without incoming messages (normalized)."""
    if not 0 <= i < state.N:
        raise IndexError(f"datum index {i} out of range")
    lw = _log_conditional(state, i, _removed(state, i))
    return lw - np.logaddexp.reduce(lw)


def gmm_shared_belief(state: GmmState, i: int) -> CategoricalDist:
    """Full conditional of datum ``i``'s assignment times its incoming message."""
    if not 0 <= i < state.N:
        raise IndexError(f"datum index {i} out of range")
    return CategoricalDist.from_log_weights(gmm_full_conditional(state, i) + state.messages[i])


def _move(state: GmmState, i: int, new: int, removed) -> None:
    old = state.assignments[i]
    if new == old:
        return
    state.assignments[i] = new
    state._version += 1
    state._counts[old] -= 1
    state._counts[new] += 1
    for k in (old, new):
        state.stats[k] = state.component_stats(k)
    if state._table is not None:
        state._table.set(old, removed[1])
        state._table.set(new, _predictive(state.prior, state.stats[new]))


def set_assignment(state: GmmState, i: int, k: int) -> None:
    _move(state, i, int(k), _removed(state, i))


def gmm_gibbs_sweep(state: GmmState, data=None, rng=None, skip=None) -> np.ndarray:
    """One systematic-scan collapsed Gibbs sweep, in place.

    ``skip`` marks data whose assignment is held fixed (entries >= 0).
    Returns the N x K message-weighted conditionals the draws came from
    (zero rows for skipped data).
    """
    if rng is None:
        raise GmmError("an rng is required")
    if data is not None:
        x = _as_matrix(data)
        if x.shape != state.data.shape:
            raise GmmError("data shape differs from the state's data")
        if not np.array_equal(x, state.data):
            state.data = x
            state.refresh()
    probs = np.zeros((state.N, state.K))
    for i in range(state.N):
        if skip is not None and skip[i] >= 0:
            continue
        removed = _removed(state, i)
        lw = _log_conditional(state, i, removed) + state.messages[i]
        p = np.exp(lw - lw.max())
        p /= p.sum()
        probs[i] = p
        _move(state, i, draw_categorical(p, rng), removed)
    return probs


def niw_log_marginal(prior: NiwParams, stats: GaussianStats) -> float:
    """log p(x_1..n) under the NIW prior, in the usual closed form."""
    if stats.n == 0:
        return 0.0
    post = posterior_update(prior, stats)
    D = prior.D
    return float(-0.5 * stats.n * D * np.log(np.pi)
                 + multigammaln(post.dof / 2.0, D) - multigammaln(prior.dof / 2.0, D)
                 + 0.5 * prior.dof * np.linalg.slogdet(prior.scale)[1]
                 - 0.5 * post.dof * np.linalg.slogdet(post.scale)[1]
                 + 0.5 * D * (np.log(prior.kappa) - np.log(post.kappa)))


def gmm_log_joint(state: GmmState, include_messages: bool = True) -> float:
    """Collapsed log p(x, z) plus installed message factors."""
    a = state.weight_prior.alpha
    n = state.counts()
    lp = float(gammaln(a.sum()) - gammaln(a.sum() + state.N) + (gammaln(a + n) - gammaln(a)).sum())
    if state._known_ll is not None:
        lp += float(state._known_ll[np.arange(state.N), state.assignments].sum())
    else:
        lp += sum(niw_log_marginal(state.prior, s) for s in state.stats)
    if include_messages:
        lp += float(state.messages[np.arange(state.N), state.assignments].sum())
    return lp


def gmm_responsibilities(state: GmmState) -> np.ndarray:
    return np.array([gmm_shared_belief(state, i).probs for i in range(state.N)])


class GmmEndpoint(ItemCategoricalEndpoint):
    """Exposes each datum's component assignment as ``prefix[i]``."""

    def __init__(self, id: str, state: GmmState, prefix: str = "z", sweeps: int = 1, burn_in: int = 0):
        super().__init__(id, prefix, state.N, state.K, burn_in=burn_in)
        self.state = state
        self.sweeps = int(sweeps)
        self.msg = state.messages  # shared view so messages reach the sampler

    def _log_conditional(self, i):
        return gmm_full_conditional(self.state, i)

    def _set_latent(self, i, k):
        set_assignment(self.state, i, k)

    def _sweep(self, rng):
        acc = np.zeros((self.state.N, self.state.K))
        for _ in range(self.sweeps):
            acc += gmm_gibbs_sweep(self.state, rng=rng, skip=self.pinned)
        return acc / self.sweeps
