"""Collapsed Dirichlet link between two per-item categorical latents.

Model per item ``i``: ``c_i ~ Cat(pi)``, ``r_i | c_i ~ Cat(psi[c_i])`` with
symmetric Dirichlet priors on ``pi`` and each ``psi[c]``, both integrated out.
The module sits on the bus through two views: one exposing ``r_i`` and one
exposing ``c_i``.  Each view resamples only its own family given the other,
so a round over both is a blocked Gibbs scan of the link.
"""
from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from ..rng import draw_categorical
from ..serket import ItemCategoricalEndpoint


class LinkState:
    def __init__(self, n_items: int, R: int, C: int, beta: float = 0.5, gamma: float = 1.0,
                 places=None, categories=None):
        self.N, self.R, self.C = int(n_items), int(R), int(C)
        if beta <= 0 or gamma <= 0:
            raise ValueError("link priors must be positive")
        self.beta, self.gamma = float(beta), float(gamma)
        self.r = np.zeros(self.N, np.int64) if places is None else np.asarray(places, np.int64).copy()
        self.c = np.zeros(self.N, np.int64) if categories is None else np.asarray(categories, np.int64).copy()
        self.rebuild()

    def rebuild(self) -> None:
        self.n_cr = np.zeros((self.C, self.R), np.int64)
        np.add.at(self.n_cr, (self.c, self.r), 1)
        self.m_c = self.n_cr.sum(axis=1)

    def cache_consistent(self) -> bool:
        n, m = self.n_cr.copy(), self.m_c.copy()
        self.rebuild()
        return np.array_equal(n, self.n_cr) and np.array_equal(m, self.m_c)

    def _drop(self, i):
        self.n_cr[self.c[i], self.r[i]] -= 1
        self.m_c[self.c[i]] -= 1

    def _keep(self, i):
        self.n_cr[self.c[i], self.r[i]] += 1
        self.m_c[self.c[i]] += 1

    def place_log_conditional(self, i: int) -> np.ndarray:
        self._drop(i)
        lw = np.log(self.n_cr[self.c[i]] + self.beta)
        self._keep(i)
        return lw - np.logaddexp.reduce(lw)

    def category_log_conditional(self, i: int) -> np.ndarray:
        self._drop(i)
        lw = (np.log(self.m_c + self.gamma) + np.log(self.n_cr[:, self.r[i]] + self.beta)
              - np.log(self.m_c + self.R * self.beta))
        self._keep(i)
        return lw - np.logaddexp.reduce(lw)

    def set_place(self, i: int, r: int) -> None:
        self._drop(i)
        self.r[i] = int(r)
        self._keep(i)

    def set_category(self, i: int, c: int) -> None:
        self._drop(i)
        self.c[i] = int(c)
        self._keep(i)

    def place_given_category(self) -> np.ndarray:
        return (self.n_cr + self.beta) / (self.m_c[:, None] + self.R * self.beta)

    def log_marginal(self) -> float:
        """Collapsed log p(c, r) with both Dirichlets integrated out."""
        b, g = self.beta, self.gamma
        lp = (self.C * gammaln(self.R * b) - gammaln(self.m_c + self.R * b).sum()
              + (gammaln(self.n_cr + b) - gammaln(b)).sum())
        lp += gammaln(self.C * g) - gammaln(self.N + self.C * g) + (gammaln(self.m_c + g) - gammaln(g)).sum()
        return float(lp)

    def category_prior(self) -> np.ndarray:
        return (self.m_c + self.gamma) / (self.N + self.C * self.gamma)


class _LinkView(ItemCategoricalEndpoint):
    def __init__(self, id, state: LinkState, prefix, K, log_cond, setter):
        super().__init__(id, prefix, state.N, K)
        self.state = state
        self._cond = log_cond
        self._setter = setter

    def _log_conditional(self, i):
        return self._cond(i)

    def _set_latent(self, i, k):
        self._setter(i, k)

    def _sweep(self, rng):
        out = np.zeros((self.n_items, self.K))
        for i in range(self.n_items):
            lw = self._cond(i) + self.msg[i]
            p = np.exp(lw - lw.max())
            p /= p.sum()
            out[i] = p
            k = self.pinned[i] if self.pinned[i] >= 0 else draw_categorical(p, rng)
            self._setter(i, int(k))
        return out


def link_endpoints(id: str, state: LinkState, place_prefix: str = "place", category_prefix: str = "cat"):
    """The two bus views of one link module, with ids ``<id>.place`` and ``<id>.cat``."""
    place = _LinkView(f"{id}.place", state, place_prefix, state.R, state.place_log_conditional, state.set_place)
    cat = _LinkView(f"{id}.cat", state, category_prefix, state.C, state.category_log_conditional,
                    state.set_category)
    return place, cat
