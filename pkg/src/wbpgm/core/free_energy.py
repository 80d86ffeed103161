"""Evidence lower bound for discrete latent variables."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .distributions import CategoricalDist, NORM_TOL


def log_evidence(joint_log_prob: Callable[[int], float], K: int) -> float:
    """ln p(x_obs) by exact marginalization over ``z in range(K)``."""
    return float(logsumexp([joint_log_prob(z) for z in range(K)]))


def elbo(joint_log_prob: Callable[[int], float], q) -> float:
    """E_q[ln p(x, z) - ln q(z)] over an enumerable latent ``z``.

    ``q`` may be a :class:`CategoricalDist` or a raw probability vector; raw
    vectors that do not sum to one are rejected.
    """
    if not isinstance(q, CategoricalDist):
        p = np.asarray(q, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
            raise ValueError("q must be a normalized distribution")
        q = CategoricalDist(p)
    total = 0.0
    for z, qz in enumerate(q.probs):
        if qz == 0:
            continue
        lp = joint_log_prob(z)
        if lp == -np.inf:
            return -np.inf
        total += qz * (lp - np.log(qz))
    return float(total)


def free_energy(joint_log_prob: Callable[[int], float], q) -> float:
    """Variational free energy, the negated ELBO."""
    return -elbo(joint_log_prob, q)


def table_log_prob(log_joint: Sequence[float]) -> Callable[[int], float]:
    table = np.asarray(log_joint, dtype=float)
    return lambda z: float(table[z])
