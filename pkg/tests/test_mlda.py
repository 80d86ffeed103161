from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from wbpgm import oracle
from wbpgm.modules.mlda import (
    Corpus, MldaError, MldaState, init_mlda, mlda_gibbs_sweep, mlda_log_joint, mlda_predict_modality,
    read_corpus, set_slot, write_corpus, _slot_log_conditional,
)
from wbpgm.rng import make_rng

TINY = [[[0, 0, 1, 0], [1, 1, 0, 1]], [[1, 1, 1, 0], [0, 0, 0, 1]]]  # 2 objects x 2 modalities x 4 tokens


def test_single_topic_is_trivial():
    rng = make_rng(0, "k1")
    state = init_mlda(TINY, 1, rng)
    mlda_gibbs_sweep(state, rng=rng)
    assert all(np.all(z == 0) for obj in state.z for z in obj)
    np.testing.assert_array_equal(state.theta(), np.ones((2, 1)))


def test_vocab_overflow_rejected():
    with pytest.raises(MldaError):
        init_mlda([[[0, 5]]], 2, make_rng(0), vocab_sizes=[3])


def test_single_modality_reduces_to_plain_lda():
    gen = np.random.default_rng(0)
    docs = [gen.integers(6, size=15).tolist() for _ in range(5)]
    rng_a = make_rng(5, "lda")
    z_ref, ndk_ref, nkw_ref = oracle.plain_lda_gibbs(docs, 3, 6, 0.5, 0.1, 25, rng_a)
    rng_b = make_rng(5, "lda")
    state = init_mlda([[d] for d in docs], 3, rng_b, vocab_sizes=[6], alpha=0.5, beta=0.1)
    for _ in range(25):
        mlda_gibbs_sweep(state, rng=rng_b)
    assert [obj[0].tolist() for obj in state.z] == z_ref
    np.testing.assert_array_equal(state.doc_topic, ndk_ref)
    np.testing.assert_array_equal(state.topic_word[0], nkw_ref)


def _count_signature(state):
    return tuple(state.doc_topic.ravel())


def test_tiny_fixture_matches_enumeration():
    K, alpha, betas = 2, 1.0, [0.5, 0.5]
    joint = oracle.mlda_joint(TINY, K, [2, 2], alpha, betas)
    exact = oracle.enumerate_posterior(joint)
    # distribution of per-object topic counts (a sufficient statistic of z)
    ref = Counter()
    for cfg, p in exact.as_dict().items():
        c = np.zeros((2, K), dtype=int)
        for (o, _m, _w), k in zip([(o, m, w) for o, obj in enumerate(TINY) for m, ws in enumerate(obj) for w in ws], cfg):
            c[o, k] += 1
        ref[tuple(c.ravel())] += p
    token_marg = np.array([exact.marginal(i)[1] for i in range(16)])
    rng = make_rng(11, "tiny")
    state = init_mlda(TINY, K, rng, vocab_sizes=[2, 2], alpha=alpha, beta=betas)
    n = 100_000
    seen = Counter()
    ones = np.zeros(16)
    for _ in range(n):
        mlda_gibbs_sweep(state, rng=rng)
        seen[_count_signature(state)] += 1
        ones += np.concatenate([z for obj in state.z for z in obj])
    tv_counts = 0.5 * sum(abs(seen[k] / n - ref.get(k, 0.0)) for k in set(seen) | set(ref))
    assert tv_counts < 0.05
    assert np.max(np.abs(ones / n - token_marg)) < 0.05


def test_slot_fixture_matches_enumeration():
    corpus = [[[0, 0], [1]], [[1, 1], [0]]]
    slot_lik = [[0.9, 0.1], [0.3, 0.7]]
    exact = oracle.enumerate_posterior(oracle.mlda_joint(corpus, 2, [2, 2], 1.0, [0.5, 0.5], slot_lik))
    rng = make_rng(12, "slots")
    state = init_mlda(corpus, 2, rng, vocab_sizes=[2, 2], alpha=1.0, beta=0.5, slots=True)
    state.slot_messages[:] = np.log(slot_lik)
    n = 50_000
    seen = Counter()
    for _ in range(n):
        mlda_gibbs_sweep(state, rng=rng)
        seen[tuple(np.concatenate([z for obj in state.z for z in obj]).tolist() + state.slots.tolist())] += 1
    tv = 0.5 * sum(abs(seen[k] / n - v) for k, v in exact.as_dict().items())
    assert tv < 0.05


def test_cache_consistent_after_every_sweep():
    gen = np.random.default_rng(1)
    docs = [[gen.integers(5, size=8).tolist(), gen.integers(3, size=4).tolist()] for _ in range(6)]
    rng = make_rng(1, "cache")
    state = init_mlda(docs, 3, rng, vocab_sizes=[5, 3], slots=True)
    for _ in range(15):
        mlda_gibbs_sweep(state, rng=rng)
        assert state.cache_consistent()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 3), st.integers(0, 2))
def test_slot_flip_changes_joint_by_conditional_ratio(seed, o, k):
    gen = np.random.default_rng(seed)
    docs = [[gen.integers(4, size=5).tolist(), gen.integers(3, size=3).tolist()] for _ in range(4)]
    state = init_mlda(docs, 3, gen, vocab_sizes=[4, 3], alpha=0.7, beta=0.3, slots=True)
    state.slot_messages[:] = gen.normal(size=state.slot_messages.shape)
    cond = _slot_log_conditional(state, o) + state.slot_messages[o]
    old = state.slots[o]
    before = mlda_log_joint(state)
    set_slot(state, o, k)
    after = mlda_log_joint(state)
    assert after - before == pytest.approx(cond[k] - cond[old], abs=1e-8)


def _trained(topic_word_counts, beta, alpha=1.0):
    """State whose count tables are set directly (deterministic topic-word maps)."""
    K = len(topic_word_counts[0])
    docs = [[[] for _ in topic_word_counts]]
    state = init_mlda(docs, K, make_rng(0), vocab_sizes=[len(t[0]) for t in topic_word_counts],
                      alpha=alpha, beta=beta)
    for m, tw in enumerate(topic_word_counts):
        state.topic_word[m] = np.asarray(tw, dtype=np.int64)
        state.topic_total[m] = state.topic_word[m].sum(axis=1)
    return state


def test_deterministic_topics_predict_cross_modally():
    state = _trained([[[50, 0], [0, 50]], [[0, 0, 40], [40, 0, 0]]], beta=1e-4, alpha=0.01)
    pred = mlda_predict_modality(state, {0: [1, 1, 1]}, target=1)
    assert pred.probs[0] > 0.99


def test_uniform_model_predicts_uniform():
    state = _trained([[[5, 5], [5, 5]], [[3, 3, 3], [3, 3, 3]]], beta=0.1)
    pred = mlda_predict_modality(state, {0: [0, 1]}, target=1)
    np.testing.assert_allclose(pred.probs, np.full(3, 1 / 3), atol=1e-12)


def test_prediction_matches_quadrature():
    state = _trained([[[6, 2], [1, 5]], [[4, 1, 0], [0, 2, 5]]], beta=0.3)
    obs = [0, 1, 0]
    phi0, phi1 = state.phi(0), state.phi(1)
    a = state.alpha

    def weight(t, w=None):
        theta = np.array([t, 1 - t])
        val = np.prod([theta @ phi0[:, o] for o in obs]) * (t * (1 - t)) ** (a - 1)
        return val * (theta @ phi1[:, w]) if w is not None else val

    z = integrate.quad(weight, 0, 1, epsabs=1e-13)[0]
    ref = [integrate.quad(lambda t: weight(t, w), 0, 1, epsabs=1e-13)[0] / z for w in range(3)]
    pred = mlda_predict_modality(state, {0: obs}, target=1)
    np.testing.assert_allclose(pred.probs, ref, atol=1e-9)
    # fold-in sampling agrees with the exact path when the enumeration is too large
    many = {0: obs * 5}
    exact = mlda_predict_modality(state, {0: obs * 4}, target=1)
    approx = mlda_predict_modality(state, {0: obs * 4}, target=1, rng=make_rng(0, "fold"))
    np.testing.assert_allclose(approx.probs, exact.probs, atol=1e-12)
    folded = mlda_predict_modality(state, many, target=1, rng=make_rng(0, "fold"), fold_in_sweeps=4000)
    assert folded.probs.sum() == pytest.approx(1.0)


def test_all_missing_is_error():
    state = _trained([[[1, 1]], [[1, 1]]], beta=0.1)
    with pytest.raises(MldaError):
        mlda_predict_modality(state, {1: [0]}, target=1)


def test_corpus_round_trip(tmp_path):
    corpus = Corpus(["a", "b"], ["vision", "audio", "words"], [[[0, 1], [2], [1]], [[3], [], [0, 0]]])
    path = tmp_path / "c.jsonl"
    write_corpus(path, corpus)
    again = read_corpus(path, corpus.modalities)
    assert again.ids == corpus.ids and again.docs == corpus.docs
    assert sorted(read_corpus(path).modalities) == sorted(corpus.modalities)
    assert again.select(["vision", "words"]).docs == [[[0, 1], [1]], [[3], [0, 0]]]
