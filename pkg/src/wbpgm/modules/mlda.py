"""Multimodal LDA with collapsed Gibbs sampling.

Each object has one topic-proportion vector shared by all of its modalities;
each modality has its own topic-word distributions.  Both are integrated out,
so a token's topic is drawn from
``(n_ok + alpha) * (n_mkw + beta_m) / (n_mk + V_m * beta_m)``.

An optional per-object *slot* topic counts toward the object's topic counts
but emits no token.  It is the handle other modules attach to on the bus.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln

from ..core.distributions import CategoricalDist
from ..rng import draw_categorical
from ..serket import ItemCategoricalEndpoint

MAX_ENUMERATION = 4096


class MldaError(ValueError):
    pass


@dataclass
class Corpus:
    """Per-object token lists, ``docs[o][m]``, plus object and modality names."""

    ids: list
    modalities: list
    docs: list

    @property
    def n_objects(self) -> int:
        return len(self.docs)

    def modality(self, name: str) -> list:
        m = self.modalities.index(name)
        return [obj[m] for obj in self.docs]

    def select(self, names) -> "Corpus":
        idx = [self.modalities.index(n) for n in names]
        return Corpus(list(self.ids), list(names), [[list(obj[m]) for m in idx] for obj in self.docs])

    def vocab_sizes(self) -> list:
        return [max((max(obj[m], default=-1) for obj in self.docs), default=-1) + 1
                for m in range(len(self.modalities))]


def read_corpus(path, modalities=None) -> Corpus:
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                ids.append(rec["id"])
                rows.append(rec["modalities"])
    if modalities is None:
        modalities = list(dict.fromkeys(k for r in rows for k in r))
    docs = [[list(map(int, r.get(m, []))) for m in modalities] for r in rows]
    return Corpus(ids, list(modalities), docs)


def write_corpus(path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for oid, obj in zip(corpus.ids, corpus.docs):
            rec = {"id": oid, "modalities": {m: list(map(int, toks)) for m, toks in zip(corpus.modalities, obj)}}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass(eq=False)
class MldaState:
    K: int
    vocab_sizes: tuple
    alpha: float
    betas: tuple
    docs: list  # docs[o][m] -> int array of tokens
    z: list  # z[o][m] -> int array of topics
    slots: Optional[np.ndarray] = None  # per-object slot topic, or None
    slot_messages: Optional[np.ndarray] = None
    doc_topic: np.ndarray = field(default=None, repr=False)
    topic_word: list = field(default_factory=list, repr=False)
    topic_total: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.K < 1:
            raise MldaError("K must be >= 1")
        if self.alpha <= 0 or any(b <= 0 for b in self.betas):
            raise MldaError("alpha and beta must be > 0")
        self.vocab_sizes = tuple(int(v) for v in self.vocab_sizes)
        self.betas = tuple(float(b) for b in self.betas)
        if len(self.betas) != self.M:
            raise MldaError("need one beta per modality")
        for obj in self.docs:
            if len(obj) != self.M:
                raise MldaError("every object needs one token list per modality")
            for m, toks in enumerate(obj):
                if len(toks) and (np.min(toks) < 0 or np.max(toks) >= self.vocab_sizes[m]):
                    raise MldaError(f"token id outside vocabulary of modality {m}")
        if self.slots is not None and self.slot_messages is None:
            self.slot_messages = np.zeros((self.n_objects, self.K))
        self.rebuild()

    @property
    def M(self) -> int:
        return len(self.vocab_sizes)

    @property
    def n_objects(self) -> int:
        return len(self.docs)

    def _count_tables(self):
        ndk = np.zeros((self.n_objects, self.K), dtype=np.int64)
        nkw = [np.zeros((self.K, V), dtype=np.int64) for V in self.vocab_sizes]
        for o, obj in enumerate(self.docs):
            for m, toks in enumerate(obj):
                np.add.at(ndk[o], self.z[o][m], 1)
                np.add.at(nkw[m], (self.z[o][m], toks), 1)
            if self.slots is not None:
                ndk[o, self.slots[o]] += 1
        return ndk, nkw, [t.sum(axis=1) for t in nkw]

    def rebuild(self) -> None:
        self.doc_topic, self.topic_word, self.topic_total = self._count_tables()

    def cache_consistent(self) -> bool:
        ndk, nkw, nk = self._count_tables()
        return (np.array_equal(ndk, self.doc_topic)
                and all(np.array_equal(a, b) for a, b in zip(nkw, self.topic_word))
                and all(np.array_equal(a, b) for a, b in zip(nk, self.topic_total)))

    def theta(self) -> np.ndarray:
        """Posterior-mean topic proportions per object."""
        n = self.doc_topic + self.alpha
        return n / n.sum(axis=1, keepdims=True)

    def phi(self, m: int) -> np.ndarray:
        """Posterior-mean topic-word distributions for modality ``m``."""
        return (self.topic_word[m] + self.betas[m]) / (self.topic_total[m][:, None]
                                                      + self.vocab_sizes[m] * self.betas[m])

    def object_topics(self) -> np.ndarray:
        """Most frequent topic per object."""
        return self.doc_topic.argmax(axis=1)


def init_mlda(corpus, K: int, rng, vocab_sizes=None, alpha: float = 1.0, beta=0.1,
              slots: bool = False) -> MldaState:
    """Uniform random initialization: one ``rng.integers(K)`` per token, then per slot."""
    docs = corpus.docs if isinstance(corpus, Corpus) else corpus
    if len(docs) == 0:
        raise MldaError("corpus has no objects")
    M = len(docs[0])
    if vocab_sizes is None:
        vocab_sizes = Corpus([], [None] * M, docs).vocab_sizes()
    betas = tuple([float(beta)] * M) if np.isscalar(beta) else tuple(beta)
    arrs = [[np.asarray(t, dtype=np.int64) for t in obj] for obj in docs]
    z = [[np.array([int(rng.integers(K)) for _ in toks], dtype=np.int64) for toks in obj] for obj in arrs]
    slot = np.array([int(rng.integers(K)) for _ in arrs], dtype=np.int64) if slots else None
    return MldaState(K, tuple(vocab_sizes), float(alpha), betas, arrs, z, slot)


def _token_weights(state: MldaState, o: int, m: int, w: int) -> np.ndarray:
    tw = state.topic_word[m][:, w]
    return (state.doc_topic[o] + state.alpha) * ((tw + state.betas[m])
                                                 / (state.topic_total[m] + state.vocab_sizes[m] * state.betas[m]))


def _slot_log_conditional(state: MldaState, o: int) -> np.ndarray:
    n = state.doc_topic[o].astype(float)
    n[state.slots[o]] -= 1
    lw = np.log(n + state.alpha)
    return lw - np.logaddexp.reduce(lw)


def set_slot(state: MldaState, o: int, k: int) -> None:
    state.doc_topic[o, state.slots[o]] -= 1
    state.slots[o] = int(k)
    state.doc_topic[o, k] += 1


def mlda_gibbs_sweep(state: MldaState, corpus=None, rng=None, pinned=None) -> Optional[np.ndarray]:
    """One collapsed Gibbs sweep over all tokens (then slots), in place.

    Objects, modalities and tokens are visited in order with one
    ``rng.random()`` per token.  ``pinned[o] >= 0`` holds object ``o``'s slot
    fixed.  Returns the message-weighted slot conditionals when slots exist.
    """
    if rng is None:
        raise MldaError("an rng is required")
    if corpus is not None:
        docs = corpus.docs if isinstance(corpus, Corpus) else corpus
        if len(docs) != state.n_objects or any(
                not np.array_equal(np.asarray(t), s) for obj, sobj in zip(docs, state.docs) for t, s in zip(obj, sobj)):
            raise MldaError("corpus differs from the one the state was built on")
    ndk = state.doc_topic
    for o, obj in enumerate(state.docs):
        for m, toks in enumerate(obj):
            zs = state.z[o][m]
            nkw, nk = state.topic_word[m], state.topic_total[m]
            for i in range(len(toks)):
                w, k = toks[i], zs[i]
                ndk[o, k] -= 1
                nkw[k, w] -= 1
                nk[k] -= 1
                new = draw_categorical(_token_weights(state, o, m, w), rng)
                zs[i] = new
                ndk[o, new] += 1
                nkw[new, w] += 1
                nk[new] += 1
    if state.slots is None:
        return None
    probs = np.zeros((state.n_objects, state.K))
    for o in range(state.n_objects):
        lw = _slot_log_conditional(state, o) + state.slot_messages[o]
        p = np.exp(lw - lw.max())
        p /= p.sum()
        probs[o] = p
        if pinned is not None and pinned[o] >= 0:
            continue
        set_slot(state, o, draw_categorical(p, rng))
    return probs


def mlda_log_joint(state: MldaState, include_messages: bool = True) -> float:
    """Collapsed log p(tokens, z, slots) plus installed slot messages."""
    a = state.alpha
    lp = 0.0
    for n in state.doc_topic:
        lp += gammaln(state.K * a) - gammaln(state.K * a + n.sum()) + (gammaln(n + a) - gammaln(a)).sum()
    for m in range(state.M):
        b, V = state.betas[m], state.vocab_sizes[m]
        for row in state.topic_word[m]:
            lp += gammaln(V * b) - gammaln(V * b + row.sum()) + (gammaln(row + b) - gammaln(b)).sum()
    if include_messages and state.slots is not None:
        lp += float(state.slot_messages[np.arange(state.n_objects), state.slots].sum())
    return float(lp)


def mlda_predict_modality(state: MldaState, observed: dict, target: int, rng=None,
                          fold_in_sweeps: int = 200) -> CategoricalDist:
    """Predict a new object's ``target``-modality token from its observed modalities.

    Topic-word distributions are the state's posterior means.  The object's
    topic proportions are integrated out exactly by enumerating the observed
    tokens' topics when there are at most 4096 configurations, otherwise by
    fold-in Gibbs sampling.
    """
    toks = [(m, int(w)) for m, ws in sorted(observed.items()) if m != target for w in ws]
    if not toks:
        raise MldaError("at least one modality must be observed")
    if not 0 <= target < state.M:
        raise MldaError(f"unknown target modality {target}")
    phis = [state.phi(m) for m in range(state.M)]
    lik = np.array([phis[m][:, w] for m, w in toks])  # N x K
    K, N, a = state.K, len(toks), state.alpha
    if K ** N <= MAX_ENUMERATION:
        log_lik = np.log(lik)
        mean_theta = np.zeros(K)
        log_total = -np.inf
        for zs in itertools.product(range(K), repeat=N):
            n = np.bincount(zs, minlength=K)
            lw = (gammaln(K * a) - gammaln(K * a + N) + (gammaln(n + a) - gammaln(a)).sum()
                  + log_lik[np.arange(N), zs].sum())
            log_total = np.logaddexp(log_total, lw)
            mean_theta += np.exp(lw) * (n + a) / (N + K * a)
        mean_theta /= np.exp(log_total)
    else:
        if rng is None:
            raise MldaError("fold-in sampling needs an rng")
        zs = rng.integers(K, size=N)
        n = np.bincount(zs, minlength=K).astype(float)
        mean_theta = np.zeros(K)
        burn = fold_in_sweeps // 4
        for sweep in range(fold_in_sweeps):
            for i in range(N):
                n[zs[i]] -= 1
                zs[i] = draw_categorical((n + a) * lik[i], rng)
                n[zs[i]] += 1
            if sweep >= burn:
                mean_theta += (n + a) / (N + K * a)
        mean_theta /= fold_in_sweeps - burn
    return CategoricalDist.from_weights(mean_theta @ phis[target])


class MldaEndpoint(ItemCategoricalEndpoint):
    """Exposes each object's slot topic as ``prefix[o]``."""

    def __init__(self, id: str, state: MldaState, prefix: str = "topic", sweeps: int = 1, burn_in: int = 0):
        if state.slots is None:
            raise MldaError("the endpoint needs a state built with slots=True")
        super().__init__(id, prefix, state.n_objects, state.K, burn_in=burn_in)
        self.state = state
        self.sweeps = int(sweeps)
        self.msg = state.slot_messages

    def _log_conditional(self, i):
        return _slot_log_conditional(self.state, i)

    def _set_latent(self, i, k):
        set_slot(self.state, i, k)

    def _sweep(self, rng):
        acc = np.zeros((self.state.n_objects, self.state.K))
        for _ in range(self.sweeps):
            acc += mlda_gibbs_sweep(self.state, rng=rng, pinned=self.pinned)
        return acc / self.sweeps
