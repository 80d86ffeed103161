"""Per-item category observation module.

Each item ``i`` carries a K-valued category and a bag of observed tokens.
Tokens are emitted either through a fixed K x V matrix or through per-category
word distributions under a symmetric Dirichlet prior that are integrated out.
The module adds no prior over categories of its own unless ``prior_alpha`` is
given, so alone on the bus it acts as a pure likelihood factor.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import gammaln

from ..rng import draw_categorical
from ..serket import ItemCategoricalEndpoint


class CategoryError(ValueError):
    pass


class CategoryObservationEndpoint(ItemCategoricalEndpoint):
    def __init__(self, id: str, observations, K: int, V: int, prefix: str = "c",
                 emission=None, beta: float = 0.1, prior_alpha: Optional[float] = None,
                 init=None, sweeps: int = 1, burn_in: int = 0):
        obs = [np.asarray(o, dtype=np.int64).ravel() for o in observations]
        super().__init__(id, prefix, len(obs), K, burn_in=burn_in)
        if any(len(o) and (o.min() < 0 or o.max() >= V) for o in obs):
            raise CategoryError("observation outside vocabulary")
        self.obs = obs
        self._bags = [np.unique(o, return_counts=True) for o in obs]
        self.V = int(V)
        self.sweeps = int(sweeps)
        self.prior_alpha = prior_alpha
        if emission is not None:
            em = np.asarray(emission, dtype=float)
            if em.shape != (K, V) or np.any(em < 0) or np.any(np.abs(em.sum(axis=1) - 1) > 1e-9):
                raise CategoryError("emission must be a row-stochastic K x V matrix")
            with np.errstate(divide="ignore"):
                self.log_emission = np.log(em)
            self.rao_blackwell = True
        else:
            self.log_emission = None
            if beta <= 0:
                raise CategoryError("beta must be > 0")
        self.beta = float(beta)
        self.latent = np.zeros(self.n_items, dtype=np.int64) if init is None else np.asarray(init, np.int64).copy()
        self._rebuild()

    def _rebuild(self):
        self.counts = np.zeros((self.K, self.V), dtype=np.int64)
        self.sizes = np.zeros(self.K, dtype=np.int64)
        for i, o in enumerate(self.obs):
            np.add.at(self.counts[self.latent[i]], o, 1)
        self.sizes = self.counts.sum(axis=1)
        self.n_cat = np.bincount(self.latent, minlength=self.K)

    def cache_consistent(self) -> bool:
        counts, sizes, n_cat = self.counts.copy(), self.sizes.copy(), self.n_cat.copy()
        self._rebuild()
        ok = (np.array_equal(counts, self.counts) and np.array_equal(sizes, self.sizes)
              and np.array_equal(n_cat, self.n_cat))
        return ok

    def _remove(self, i):
        k = self.latent[i]
        np.subtract.at(self.counts[k], self.obs[i], 1)
        self.sizes[k] -= len(self.obs[i])
        self.n_cat[k] -= 1

    def _add(self, i, k):
        self.latent[i] = k
        np.add.at(self.counts[k], self.obs[i], 1)
        self.sizes[k] += len(self.obs[i])
        self.n_cat[k] += 1

    def _log_conditional_removed(self, i) -> np.ndarray:
        """Conditional of item ``i`` assuming it is already removed from the counts."""
        o = self.obs[i]
        if self.log_emission is not None:
            lw = self.log_emission[:, o].sum(axis=1)
        else:
            # sequential Dirichlet-multinomial predictive of the bag
            lw = np.zeros(self.K)
            words, reps = self._bags[i]
            b, V = self.beta, self.V
            cw = self.counts[:, words] + b
            lw += (gammaln(cw + reps) - gammaln(cw)).sum(axis=1)
            lw -= gammaln(self.sizes + V * b + len(o)) - gammaln(self.sizes + V * b)
        if self.prior_alpha is not None:
            lw = lw + np.log(self.n_cat + self.prior_alpha)
        return lw

    def _log_conditional(self, i):
        if self.log_emission is None or self.prior_alpha is not None:
            self._remove(i)
            lw = self._log_conditional_removed(i)
            self._add(i, self.latent[i])
        else:
            lw = self._log_conditional_removed(i)
        if not np.isfinite(lw).any():
            return np.full(self.K, -np.log(self.K))
        return lw - np.logaddexp.reduce(lw[np.isfinite(lw)])

    def _set_latent(self, i, k):
        self._remove(i)
        self._add(i, int(k))

    def _sweep(self, rng):
        acc = np.zeros((self.n_items, self.K))
        for _ in range(self.sweeps):
            for i in range(self.n_items):
                self._remove(i)
                lw = self._log_conditional_removed(i) + self.msg[i]
                p = np.exp(lw - lw.max())
                p /= p.sum()
                acc[i] += p
                k = self.pinned[i] if self.pinned[i] >= 0 else draw_categorical(p, rng)
                self._add(i, int(k))
        return acc / self.sweeps

    def log_marginal(self) -> float:
        """Log probability of all tokens given the current categories (plus the category prior if any)."""
        if self.log_emission is not None:
            lp = float(sum(self.log_emission[self.latent[i], o].sum() for i, o in enumerate(self.obs)))
        else:
            b, V = self.beta, self.V
            lp = float(self.K * gammaln(V * b) - gammaln(self.sizes + V * b).sum()
                       + (gammaln(self.counts + b) - gammaln(b)).sum())
        if self.prior_alpha is not None:
            a = self.prior_alpha
            lp += float(gammaln(self.K * a) - gammaln(self.n_items + self.K * a)
                        + (gammaln(self.n_cat + a) - gammaln(a)).sum())
        return lp

    def word_distributions(self) -> np.ndarray:
        """Per-category token distributions (posterior means when learned)."""
        if self.log_emission is not None:
            return np.exp(self.log_emission)
        return (self.counts + self.beta) / (self.sizes[:, None] + self.V * self.beta)
