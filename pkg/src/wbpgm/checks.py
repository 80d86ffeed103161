"""Two-module consensus fixtures checked against exact enumeration.

Each fixture builds a bus with two endpoints sharing one categorical variable
per item, plus the monolithic joint over every latent of the undecomposed
model.  The exact posterior over the shared variables comes from summing that
joint.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oracle
from .core.distributions import NiwParams
from .modules.category import CategoryObservationEndpoint
from .modules.gmm import GmmEndpoint, init_gmm
from .modules.hmm import HmmEndpoint, HmmParams
from .modules.mlda import MldaEndpoint, init_mlda
from .rng import make_rng
from .serket import Bus, ConnectionKind, ExchangeMode, connect_items, item_var

LABEL_EMISSION = [[0.85, 0.15], [0.25, 0.75]]


@dataclass
class ConsensusFixture:
    name: str
    build: Callable  # seed -> (bus, [shared variable names])
    joint: oracle.DiscreteJoint  # monolithic joint over all latents
    shared: list  # indices of the shared variables inside ``joint``

    def exact(self) -> tuple:
        """Exact per-variable marginals and joint over the shared variables."""
        post = oracle.enumerate_posterior(self.joint)
        joint = Counter()
        for cfg, p in zip(post.support, post.probs):
            joint[tuple(cfg[i] for i in self.shared)] += p
        K = self.joint.domains[self.shared[0]]
        marg = np.zeros((len(self.shared), K))
        for cfg, p in joint.items():
            marg[np.arange(len(cfg)), cfg] += p
        return marg, dict(joint)


def _label_lik(labels):
    em = np.asarray(LABEL_EMISSION)
    return em[:, labels].T.tolist()


def gmm_label_fixture() -> ConsensusFixture:
    data = np.array([[-1.2], [-0.4], [0.1], [0.6], [1.3], [2.0]])
    labels = [0, 0, 1, 0, 1, 1]
    prior = NiwParams(np.zeros(1), 0.5, 3.0, np.eye(1))

    def build(seed: int):
        bus = Bus(seed)
        gmm = init_gmm(data, 2, prior, 1.0, make_rng(seed, "gmm-init"))
        bus.register(GmmEndpoint("gmm", gmm, prefix="z"))
        bus.register(CategoryObservationEndpoint("label", [[l] for l in labels], 2, 2, prefix="z",
                                                 emission=LABEL_EMISSION))
        connect_items(bus, ConnectionKind.HEAD_TO_TAIL, "z", ["gmm", "label"], len(data))
        return bus, [item_var("z", i) for i in range(len(data))]

    joint = oracle.gmm_niw_joint(data.tolist(), 2, [0.0], 0.5, 3.0, [[1.0]], 1.0,
                                 label_lik=_label_lik(labels))
    return ConsensusFixture("gmm+label", build, joint, list(range(len(data))))


def mlda_label_fixture() -> ConsensusFixture:
    corpus = [[[0, 0], [1, 0]], [[1, 1], [0, 0]], [[0, 1], [1, 1]]]
    labels = [0, 1, 1]

    def build(seed: int):
        bus = Bus(seed)
        st = init_mlda(corpus, 2, make_rng(seed, "mlda-init"), vocab_sizes=[2, 2], alpha=1.0,
                       beta=0.5, slots=True)
        bus.register(MldaEndpoint("mlda", st, prefix="topic"))
        bus.register(CategoryObservationEndpoint("label", [[l] for l in labels], 2, 2, prefix="topic",
                                                 emission=LABEL_EMISSION))
        connect_items(bus, ConnectionKind.TAIL_TO_TAIL, "topic", ["mlda", "label"], len(corpus))
        return bus, [item_var("topic", o) for o in range(len(corpus))]

    joint = oracle.mlda_joint(corpus, 2, [2, 2], 1.0, [0.5, 0.5], slot_lik=_label_lik(labels))
    n_tok = sum(len(t) for obj in corpus for t in obj)
    return ConsensusFixture("mlda+label", build, joint, list(range(n_tok, n_tok + len(corpus))))


def hmm_category_fixture() -> ConsensusFixture:
    hmm = HmmParams([0.6, 0.4], [[0.8, 0.2], [0.3, 0.7]], [[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]])
    obs = [0, 1, 2, 2, 1, 0]
    cats = [0, 0, 1, 1, 1, 0]

    def build(seed: int):
        bus = Bus(seed)
        bus.register(HmmEndpoint("hmm", hmm, obs, prefix="x"))
        bus.register(CategoryObservationEndpoint("category", [[c] for c in cats], 2, 2, prefix="x",
                                                 emission=LABEL_EMISSION))
        connect_items(bus, ConnectionKind.HEAD_TO_TAIL, "x", ["hmm", "category"], len(obs))
        return bus, [item_var("x", t) for t in range(len(obs))]

    joint = oracle.hmm_joint(hmm.initial.tolist(), hmm.transition.tolist(), hmm.emission.tolist(),
                             obs, extra_lik=_label_lik(cats))
    return ConsensusFixture("hmm+category", build, joint, list(range(len(obs))))


FIXTURES = {"gmm+label": gmm_label_fixture, "mlda+label": mlda_label_fixture,
            "hmm+category": hmm_category_fixture}


@dataclass
class ConsensusResult:
    name: str
    distribution_tv: float  # max over shared variables, fixed-point consensus vs exact marginal
    sample_tv: float  # joint histogram of broadcast samples vs exact shared-variable joint
    monolithic_tv: float  # joint Gibbs on the undecomposed model vs the same exact joint

    @property
    def worst(self) -> float:
        return max(self.distribution_tv, self.sample_tv, self.monolithic_tv)


def _tv(hist: Counter, n: int, exact: dict) -> float:
    keys = set(hist) | set(exact)
    return 0.5 * sum(abs(hist.get(k, 0) / n - exact.get(k, 0.0)) for k in keys)


def run_distribution(fx: ConsensusFixture, seed: int, rounds: int) -> np.ndarray:
    bus, names = fx.build(seed)
    bus.run_until(rounds, 0.0, ExchangeMode.DISTRIBUTION)
    return np.array([bus.consensus[v] for v in names])


def run_samples(fx: ConsensusFixture, seed: int, rounds: int, burn_in: int = 200) -> Counter:
    bus, names = fx.build(seed)
    hist = Counter()
    for r in range(burn_in + rounds):
        bus.run_round(ExchangeMode.SAMPLE)
        if r >= burn_in:
            hist[tuple(int(bus.samples[v]) for v in names)] += 1
    return hist


def check_fixture(fx: ConsensusFixture, seed: int = 0, dist_rounds: int = 4000,
                  sample_rounds: int = 20000, gibbs_sweeps: int = 10000) -> ConsensusResult:
    marg, joint = fx.exact()
    cons = run_distribution(fx, seed, dist_rounds)
    d_tv = float(0.5 * np.abs(cons - marg).sum(axis=1).max())
    hist = run_samples(fx, seed, sample_rounds)
    s_tv = _tv(hist, sample_rounds, joint)
    emp = oracle.joint_gibbs(fx.joint, gibbs_sweeps, make_rng(seed, f"{fx.name}-joint"))
    mono = Counter()
    for cfg, c in emp.counts.items():
        mono[tuple(cfg[i] for i in fx.shared)] += c
    m_tv = _tv(mono, emp.n, joint)
    return ConsensusResult(fx.name, d_tv, s_tv, m_tv)
