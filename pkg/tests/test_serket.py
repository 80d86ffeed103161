import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wbpgm.checks import FIXTURES, hmm_category_fixture, run_distribution
from wbpgm.core.distributions import CategoricalDist, GaussianParams
from wbpgm.core.graph import Edge, EdgeKind, GraphicalModel, ModelError, Node, Support
from wbpgm.modules.gmm import gmm_gibbs_sweep, init_gmm
from wbpgm.core.distributions import NiwParams
from wbpgm.modules.gmm import GmmEndpoint
from wbpgm.rng import make_rng
from wbpgm.serket import (
    Belief, Bus, BusError, Connection, ConnectionKind, DegenerateConsensusError, ExchangeMode,
    ModuleEndpoint, categorical_consensus, decompose_reference, gaussian_consensus,
)
from conftest import data_path


class FixedFactor(ModuleEndpoint):
    """Endpoint emitting a constant factor over one variable."""

    def __init__(self, id, var, probs, kind="categorical"):
        super().__init__(id)
        self.var = var
        self.probs = probs
        self.kind = kind
        self.received = []

    def shared_vars(self):
        if self.kind == "categorical":
            return {self.var: Support.categorical(len(self.probs))}
        return {self.var: Support.real(self.probs.D)}

    def emit_factor(self, var):
        if self.kind == "categorical":
            return Belief(var, CategoricalDist.from_weights(self.probs))
        return Belief(var, self.probs)

    def install_message(self, var, belief):
        self.received.append(belief)


def two_factor_bus(p, q, seed=0):
    bus = Bus(seed)
    bus.register(FixedFactor("a", "v", p))
    bus.register(FixedFactor("b", "v", q))
    bus.connect(Connection(ConnectionKind.HEAD_TO_TAIL, "v", ("a", "b")))
    return bus


def test_register_and_duplicates():
    bus = Bus()
    assert bus.register(FixedFactor("a", "v", [0.5, 0.5])) == "a"
    assert bus.register(FixedFactor("b", "v", [0.5, 0.5])) == "b"
    with pytest.raises(BusError):
        bus.register(FixedFactor("a", "v", [0.5, 0.5]))


def test_register_after_run_is_error():
    bus = two_factor_bus([0.5, 0.5], [0.5, 0.5])
    bus.run_round()
    with pytest.raises(BusError):
        bus.register(FixedFactor("c", "w", [0.5, 0.5]))


def test_connect_validation():
    bus = Bus()
    bus.register(FixedFactor("a", "v", [0.5, 0.5]))
    bus.register(FixedFactor("b", "v", [0.2, 0.3, 0.5]))
    bus.register(FixedFactor("c", "v", [0.1, 0.9]))
    with pytest.raises(BusError, match="support mismatch"):
        bus.connect(Connection("HeadToTail", "v", ("a", "b")))
    with pytest.raises(BusError):
        bus.connect(Connection("HeadToTail", "v", ("a", "a")))
    with pytest.raises(BusError):
        bus.connect(Connection("HeadToTail", "v", ("a", "zzz")))
    bus.connect(Connection("HeadToTail", "v", ("a", "c")))
    assert "v" in bus.consensus


def test_head_to_head_needs_categorical():
    bus = Bus()
    g = GaussianParams(np.zeros(1), np.eye(1))
    bus.register(FixedFactor("a", "v", g, kind="real"))
    bus.register(FixedFactor("b", "v", g, kind="real"))
    with pytest.raises(BusError):
        bus.connect(Connection("HeadToHead", "v", ("a", "b")))
    bus.connect(Connection("TailToTail", "v", ("a", "b")))


def test_uniform_factor_is_identity():
    bus = two_factor_bus([0.8, 0.2], [0.5, 0.5])
    bus.run_round()
    np.testing.assert_allclose(bus.consensus["v"], [0.8, 0.2], atol=1e-15)


def test_hand_product_normalization():
    bus = two_factor_bus([0.6, 0.4], [0.3, 0.7])
    bus.run_round()
    np.testing.assert_allclose(bus.consensus["v"], np.array([0.18, 0.28]) / 0.46, atol=1e-15)
    assert bus.endpoints["a"].received[-1].dist == CategoricalDist(bus.consensus["v"])


def test_degenerate_consensus_names_variable():
    bus = two_factor_bus([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(DegenerateConsensusError) as err:
        bus.run_round()
    assert err.value.var == "v"


def test_sample_mode_broadcasts_point_mass():
    bus = two_factor_bus([0.6, 0.4], [0.3, 0.7])
    bus.run_round(ExchangeMode.SAMPLE)
    b = bus.endpoints["a"].received[-1]
    assert b.is_sample and b.dist.probs[b.sample] == 1.0


def test_gaussian_consensus_sums_precisions():
    f1 = GaussianParams(np.array([0.0]), np.array([[1.0]]))
    f2 = GaussianParams(np.array([2.0]), np.array([[1.0]]))
    g = gaussian_consensus([f1, f2])
    np.testing.assert_allclose(g.mean, [1.0])
    np.testing.assert_allclose(g.covariance, [[0.5]])
    bus = Bus()
    bus.register(FixedFactor("a", "p", f1, kind="real"))
    bus.register(FixedFactor("b", "p", f2, kind="real"))
    bus.connect(Connection("HeadToTail", "p", ("a", "b")))
    bus.run_round()
    np.testing.assert_allclose(bus.consensus["p"].mean, [1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3), min_size=2, max_size=4),
       st.randoms())
def test_consensus_order_independent(factors, rnd):
    arr = [np.array(f) / sum(f) for f in factors]
    ids = [f"m{i}" for i in range(len(arr))]

    def consensus(order):
        bus = Bus()
        for i in order:
            bus.register(FixedFactor(ids[i], "v", arr[i]))
        bus.connect(Connection("TailToTail", "v", tuple(ids[i] for i in order)))
        bus.run_round()
        return bus.consensus["v"]

    order = list(range(len(arr)))
    perm = order[:]
    rnd.shuffle(perm)
    assert np.array_equal(consensus(order), consensus(perm))


def test_single_module_is_standalone():
    data = np.random.default_rng(0).normal(size=(8, 1))
    prior = NiwParams(np.zeros(1), 1.0, 3.0, np.eye(1))
    alone = init_gmm(data, 2, prior, rng=make_rng(5, "init"))
    on_bus = init_gmm(data, 2, prior, rng=make_rng(5, "init"))
    bus = Bus(9)
    bus.register(GmmEndpoint("gmm", on_bus))
    rng = make_rng(9, "gmm")
    for _ in range(10):
        bus.run_round()
        gmm_gibbs_sweep(alone, rng=rng)
    assert bus.consensus == {}
    assert np.array_equal(alone.assignments, on_bus.assignments)


def test_run_until_stopping_rules():
    bus = Bus()
    bus.register(FixedFactor("a", "v", [0.5, 0.5]))
    rep = bus.run_until(10, 1e-6)
    assert rep.converged and rep.rounds == 1 and rep.max_kl == 0.0
    bus = two_factor_bus([0.6, 0.4], [0.3, 0.7])
    rep = bus.run_until(10, float("inf"))
    assert rep.converged and rep.rounds == 1
    bus = two_factor_bus([0.6, 0.4], [0.3, 0.7])
    rep = bus.run_until(10, 1e-12)
    assert rep.converged and rep.rounds == 2 and rep.history[1] == 0.0
    rep = two_factor_bus([0.6, 0.4], [0.3, 0.7]).run_until(1, -1.0)
    assert not rep.converged and rep.reason == "max_rounds"


def test_damping_moves_part_way():
    bus = Bus(damping=0.5)
    bus.register(FixedFactor("a", "v", [0.9, 0.1]))
    bus.register(FixedFactor("b", "v", [0.5, 0.5]))
    bus.connect(Connection("HeadToTail", "v", ("a", "b")))
    bus.run_round()
    np.testing.assert_allclose(bus.consensus["v"], [0.9, 0.1])
    bus.endpoints["a"].probs = [0.1, 0.9]
    bus.run_round()
    np.testing.assert_allclose(bus.consensus["v"], [0.5, 0.5])


def test_hmm_category_distribution_fixed_point_is_exact():
    fx = hmm_category_fixture()
    marg, _ = fx.exact()
    cons = run_distribution(fx, 0, 5)
    np.testing.assert_allclose(cons, marg, atol=1e-12)


def test_same_seed_is_bit_identical():
    fx = FIXTURES["gmm+label"]()
    a = run_distribution(fx, 3, 30)
    b = run_distribution(fx, 3, 30)
    assert np.array_equal(a, b)


# -- decomposition --------------------------------------------------------------

def chain():
    nodes = tuple(Node(n) for n in "abc")
    edges = (Edge("a", "b", EdgeKind.GENERATIVE), Edge("b", "c", EdgeKind.GENERATIVE))
    return GraphicalModel(nodes, edges)


def test_chain_cut_in_middle():
    subs = decompose_reference(chain(), ["b"])
    assert [sorted(n.name for n in s.nodes) for s in subs] == [["a", "b"], ["b", "c"]]
    assert sum(len(s.edges) for s in subs) == 2


def test_cut_at_leaf_is_error():
    with pytest.raises(ModelError):
        decompose_reference(chain(), ["c"])
    with pytest.raises(ModelError):
        decompose_reference(chain(), ["nope"])


def test_spcoslam_splits_into_four_modules():
    with open(data_path("spcoslam_model.json")) as fh:
        model = GraphicalModel.from_json(fh.read())
    subs = decompose_reference(model, ["position", "place_category"])
    names = [{n.name for n in s.nodes} - {"position", "place_category"} for s in subs]
    assert names == [{"map", "range_obs"}, {"position_index", "position_dists", "index_dists"},
                     {"category_prior", "image_feature", "feature_dists"},
                     {"word_dists", "words", "language_model", "speech"}]
    assert sum(len(s.edges) for s in subs) == len(model.edges)
    assert {e for s in subs for e in s.edges} == set(model.edges)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 9), st.integers(0, 2 ** 31))
def test_edge_partition_property(n, seed):
    gen = np.random.default_rng(seed)
    names = [f"n{i}" for i in range(n)]
    edges = []
    for j in range(1, n):
        edges.append(Edge(names[int(gen.integers(j))], names[j], EdgeKind.GENERATIVE))
    model = GraphicalModel(tuple(Node(x) for x in names), tuple(edges))
    cut = [names[int(gen.integers(n))]]
    try:
        subs = decompose_reference(model, cut)
    except ModelError:
        return
    assert sum(len(s.edges) for s in subs) == len(model.edges)
    for s in subs:
        assert cut[0] in {nd.name for nd in s.nodes}
