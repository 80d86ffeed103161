"""Seeded, counter-based random streams.

Every stochastic component draws from its own ``numpy`` Philox stream whose
key is derived from ``(run seed, stream id)``.  Streams are therefore
independent of execution order and reproducible across processes.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, stream_id: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{stream_id}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


def make_rng(seed: int, stream_id: str = "main") -> np.random.Generator:
    """Return an independent generator for ``stream_id`` under ``seed``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, stream_id)))


def draw_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from an (unnormalized, non-negative) weight vector."""
    cdf = np.cumsum(probs)
    total = cdf[-1]
    if not total > 0:
        raise ValueError("cannot sample from an all-zero weight vector")
    u = rng.random() * total
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def draw_log_categorical(log_weights: np.ndarray, rng: np.random.Generator) -> int:
    lw = np.asarray(log_weights, dtype=float)
    m = lw.max()
    if not np.isfinite(m):
        raise ValueError("cannot sample from an all -inf log-weight vector")
    return draw_categorical(np.exp(lw - m), rng)
