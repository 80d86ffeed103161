"""Small helpers shared by the compositions."""
from __future__ import annotations

import numpy as np

from ..serket import Bus, ExchangeMode, item_var


def purity(pred, labels) -> float:
    """Fraction of items whose cluster's majority label matches their own label."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    if len(pred) == 0:
        return float("nan")
    total = 0
    for k in np.unique(pred):
        total += np.bincount(labels[pred == k]).max()
    return float(total / len(pred))


def majority_labels(pred, labels) -> dict:
    """Majority true label per predicted cluster."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    return {int(k): int(np.bincount(labels[pred == k]).argmax()) for k in np.unique(pred)}


class SampleHistogram:
    """Per-item histogram of bus samples for one variable family."""

    def __init__(self, prefix: str, n_items: int, K: int):
        self.prefix = prefix
        self.counts = np.zeros((n_items, K), np.int64)

    def record(self, bus: Bus) -> None:
        for i in range(len(self.counts)):
            self.counts[i, int(bus.samples[item_var(self.prefix, i)])] += 1

    def mode(self) -> np.ndarray:
        return self.counts.argmax(axis=1)


def run_sample_rounds(bus: Bus, rounds: int, burn_in: int, histograms=(), on_sample=None) -> None:
    """Sample-exchange rounds; histograms and ``on_sample`` see only post burn-in rounds."""
    for t in range(int(rounds)):
        bus.run_round(ExchangeMode.SAMPLE)
        if t >= burn_in:
            for h in histograms:
                h.record(bus)
            if on_sample is not None:
                on_sample()
