import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wbpgm.core import EdgeKind, Edge, NodeKind, GraphicalModel, Node, unroll, validate_acyclic
from wbpgm.gipa import (AllocationError, Direction, HcdParseError, allocate, load_hcd,
                        parse_hcd, serialize_hcd, validate_amortized)

from conftest import data_path

HPF_COMPONENTS = {"POR", "MEC sup", "MEC II sta", "DG", "CA3", "CA1 pro", "Sdis",
                    "MEC deep", "ParaSb", "RSC"}


def test_parse_hpf_fixture(hpf_path):
    g = load_hcd(hpf_path)
    assert {c.name for c in g.components} == HPF_COMPONENTS
    assert set(g.variables) == {"X", "X'", "H", "r", "g", "u", "R^POR"}
    assert ("POR", "MEC sup") in {(f.src, f.dst) for f in g.interfaces}
    assert ("MEC deep", "POR") in {(f.src, f.dst) for f in g.interfaces}


def test_parse_empty_document():
    g = parse_hcd('{"components": [], "interfaces": []}')
    assert g.components == () and g.interfaces == ()


def test_parse_dangling_endpoint_reports_location():
    doc = json.dumps({"components": [{"name": "A", "region": "", "variables": ["a"]}],
                      "interfaces": [{"src": "A", "dst": "Nowhere", "direction": "feedback"}]},
                     indent=1)
    with pytest.raises(HcdParseError) as err:
        parse_hcd(doc)
    assert err.value.location == "interfaces[0].dst"
    assert err.value.line is not None


@pytest.mark.parametrize("doc, loc", [
    ({"components": [{"name": "A"}, {"name": "A"}]}, "components[1].name"),
    ({"components": [{"name": "A"}, {"name": "B"}],
      "interfaces": [{"src": "A", "dst": "B", "direction": "sideways"}]}, "interfaces[0].direction"),
    ({"components": [{"name": "A"}, {"name": "B"}],
      "interfaces": [{"src": "A", "dst": "B", "direction": "feedback"},
                     {"src": "A", "dst": "B", "direction": "feedforward"}]}, "interfaces[1]"),
    ({"components": [{"name": "A", "variables": "a"}]}, "components[0].variables"),
])
def test_parse_errors(doc, loc):
    with pytest.raises(HcdParseError) as err:
        parse_hcd(json.dumps(doc))
    assert err.value.location == loc


def test_parse_malformed_json_has_line():
    with pytest.raises(HcdParseError) as err:
        parse_hcd('{\n "components": [\n }')
    assert err.value.line == 3


def test_allocate_hpf_counter_stream_edges(hpf_path):
    model, alloc = allocate(load_hcd(hpf_path))
    assert Edge("R^POR", "X", EdgeKind.INFERENCE) in model.edges
    assert Edge("g", "R^POR", EdgeKind.GENERATIVE) in model.edges
    assert alloc.assignments["POR->MEC sup"] is EdgeKind.INFERENCE
    assert alloc.assignments["MEC deep->POR"] is EdgeKind.GENERATIVE
    assert alloc.delta_t == frozenset({"MEC deep->MEC sup"})
    assert validate_acyclic(model).ok
    for T in range(1, 17):
        assert validate_acyclic(unroll(model, T)).ok


def test_minimal_counter_stream_pair():
    g = parse_hcd(json.dumps({
        "components": [{"name": "A", "variables": ["a"]}, {"name": "B", "variables": ["b"]}],
        "interfaces": [{"src": "A", "dst": "B", "direction": "feedforward"},
                       {"src": "B", "dst": "A", "direction": "feedback"}]}))
    model, alloc = allocate(g)
    kinds = sorted(e.kind.value for e in model.edges)
    assert kinds == ["generative", "inference"]
    assert validate_acyclic(model).ok


def test_feedback_ring_is_a_cycle_error():
    with pytest.raises(AllocationError) as err:
        allocate(load_hcd(data_path("hcd_cyclic.json")))
    assert err.value.cycles == (("a", "b", "c"),)
    assert "a -> b -> c -> a" in str(err.value)


def test_unannotated_interface_is_named():
    with pytest.raises(AllocationError) as err:
        allocate(load_hcd(data_path("hcd_unannotated.json")))
    assert err.value.interface == "B->A"


def test_validate_amortized_hpf_model_clean(hpf_path):
    model, _ = allocate(load_hcd(hpf_path))
    assert validate_amortized(model).warnings == ()


def test_validate_amortized_warnings():
    nodes = (Node("lonely"), Node("z"), Node("x", NodeKind.OBSERVED))
    edges = (Edge("z", "x"), Edge("x", "z", EdgeKind.INFERENCE))
    report = validate_amortized(GraphicalModel(nodes, edges))
    assert len(report.warnings) == 1 and "lonely" in report.warnings[0]
    report = validate_amortized(GraphicalModel(nodes[1:], edges[:1]))
    assert len(report.warnings) == 1 and "'x'" in report.warnings[0]
    assert report.ok


@st.composite
def hcd_docs(draw):
    n = draw(st.integers(1, 6))
    names = [f"C{i}" for i in range(n)]
    comps = [{"name": c, "region": draw(st.sampled_from(["", "cortex", "HPF"])),
              "variables": [f"v{i}"]} for i, c in enumerate(names)]
    pairs = draw(st.lists(st.tuples(st.sampled_from(names), st.sampled_from(names)),
                          unique=True, max_size=10))
    ifaces = []
    for s, d in pairs:
        ifaces.append({"src": s, "dst": d,
                       "direction": draw(st.sampled_from(["feedforward", "feedback"])),
                       "delta_t": False})
    return {"components": comps, "interfaces": ifaces}


@settings(max_examples=60)
@given(hcd_docs())
def test_round_trip_serialize_parse(doc):
    g = parse_hcd(json.dumps(doc))
    assert parse_hcd(json.dumps(serialize_hcd(g))) == g


@settings(max_examples=60)
@given(hcd_docs())
def test_allocation_total_and_unrollable(doc):
    g = parse_hcd(json.dumps(doc))
    try:
        model, alloc = allocate(g)
    except AllocationError as exc:
        assert exc.cycles  # only generative cycles may stop an annotated graph
        return
    assert sorted(alloc.assignments) == sorted(f.id for f in g.interfaces)
    for f in g.interfaces:
        want = EdgeKind.INFERENCE if f.direction is Direction.FEEDFORWARD else EdgeKind.GENERATIVE
        assert alloc.assignments[f.id] is want
    for T in (1, 2, 16):
        unroll(model, T)
