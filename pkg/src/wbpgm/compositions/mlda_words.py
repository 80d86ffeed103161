"""Multimodal object categories named by words: MLDA plus a word observation module."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..modules.category import CategoryObservationEndpoint
from ..modules.mlda import Corpus, MldaEndpoint, MldaError, MldaState, init_mlda
from ..rng import make_rng
from ..serket import Bus, ConnectionKind, connect_items
from .common import SampleHistogram, majority_labels, purity, run_sample_rounds


@dataclass
class MldaWordsResult:
    state: MldaState
    words: CategoryObservationEndpoint
    categories: np.ndarray  # per-object category (mode of post burn-in samples)
    word_map: dict  # category -> most probable word
    category_of_word: dict  # word -> most probable category
    purity: Optional[float] = None
    word_acc: Optional[float] = None

    def metrics(self) -> dict:
        return {"purity": self.purity, "word_acc": self.word_acc,
                "word_map": {str(k): int(v) for k, v in sorted(self.word_map.items())}}


def fit_mlda_words(corpus: Corpus, K: int, word_modality: str = "words", seed: int = 0,
                   rounds: int = 150, burn_in: int = 50, alpha: float = 1.0, beta: float = 0.1,
                   word_beta: float = 0.1, labels=None, true_words=None) -> MldaWordsResult:
    """Fit object categories from the feature modalities and tie them to the word modality.

    Each object's shared category is an extra topic draw from its MLDA topic
    proportions; the word module explains the object's word tokens from that
    category.  The two meet on the bus in sample-exchange mode.  If ``labels``
    (true category per object) are given, purity is reported; with
    ``true_words`` (word of each true category) the word-map accuracy too.
    """
    if corpus.n_objects < 2:
        raise MldaError("need at least two objects")
    if word_modality not in corpus.modalities:
        raise MldaError(f"corpus has no {word_modality!r} modality")
    for m, name in enumerate(corpus.modalities):
        if sum(len(obj[m]) for obj in corpus.docs) == 0:
            raise MldaError(f"modality {name!r} is empty")
    features = [m for m in corpus.modalities if m != word_modality]
    if not features:
        raise MldaError("need at least one feature modality besides the words")
    feat = corpus.select(features)
    words = corpus.modality(word_modality)
    V = max(max(w) for w in words if len(w)) + 1

    state = init_mlda(feat, K, make_rng(seed, "mlda-init"), alpha=alpha, beta=beta, slots=True)
    bus = Bus(seed)
    bus.register(MldaEndpoint("mlda", state, prefix="cat"))
    word_ep = CategoryObservationEndpoint("words", words, K, V, prefix="cat", beta=word_beta,
                                          init=state.slots.copy())
    bus.register(word_ep)
    connect_items(bus, ConnectionKind.HEAD_TO_TAIL, "cat", ("mlda", "words"), corpus.n_objects)
    hist = SampleHistogram("cat", corpus.n_objects, K)
    run_sample_rounds(bus, rounds, burn_in, [hist])
    cats = hist.mode()

    wd = word_ep.word_distributions()
    prior = np.bincount(cats, minlength=K) + 1e-12
    used = np.unique(cats)
    word_map = {int(k): int(wd[k].argmax()) for k in used}
    post = wd * prior[:, None]
    category_of_word = {int(w): int(post[:, w].argmax()) for w in range(V)}

    res = MldaWordsResult(state, word_ep, cats, word_map, category_of_word)
    if labels is not None:
        res.purity = purity(cats, labels)
        if true_words is not None:
            maj = majority_labels(cats, labels)
            hits = [maj.get(category_of_word.get(int(w), -1), -1) == c for c, w in enumerate(true_words)]
            res.word_acc = float(np.mean(hits))
    return res
