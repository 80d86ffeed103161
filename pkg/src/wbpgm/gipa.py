"""Generation-inference process allocation over component diagrams.

A component diagram (HCD) lists functional components, each hosting opaque
variable symbols, and directed interfaces between components annotated as
feedforward or feedback.  Allocation turns feedforward interfaces into
inference edges and feedback interfaces into generative edges (next-time
generative edges when the interface carries ``delta_t``).

Interfaces connect every variable of the source component to every variable
of the destination component.  A pair naming the same variable on both ends
produces no edge unless the interface is a ``delta_t`` one (then it is the
variable's own next-time self-loop).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .core.graph import (Edge, EdgeKind, GraphicalModel, Node, NodeKind, Support,
                         ValidationReport, validate_acyclic)


class Direction(str, Enum):
    FEEDFORWARD = "feedforward"
    FEEDBACK = "feedback"
    UNANNOTATED = "unannotated"


class HcdParseError(ValueError):
    def __init__(self, message: str, location: str = "", line: Optional[int] = None):
        self.location = location
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if location:
            where.append(location)
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class AllocationError(ValueError):
    def __init__(self, message: str, interface: Optional[str] = None, cycles=()):
        self.interface = interface
        self.cycles = tuple(cycles)
        super().__init__(message)


@dataclass(frozen=True)
class Component:
    name: str
    region: str = ""
    variables: tuple = ()


@dataclass(frozen=True)
class Interface:
    src: str
    dst: str
    direction: Direction = Direction.UNANNOTATED
    delta_t: bool = False

    @property
    def id(self) -> str:
        return f"{self.src}->{self.dst}"


@dataclass(frozen=True)
class HcdGraph:
    components: tuple = ()
    interfaces: tuple = ()
    observed: tuple = ()

    def component(self, name: str) -> Component:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def variables(self) -> list:
        out = []
        for c in self.components:
            for v in c.variables:
                if v not in out:
                    out.append(v)
        return out


@dataclass(frozen=True)
class Allocation:
    assignments: dict = field(default_factory=dict)  # interface id -> EdgeKind.GENERATIVE | INFERENCE
    delta_t: frozenset = frozenset()

    def check(self, graph: HcdGraph) -> None:
        ids = [i.id for i in graph.interfaces]
        if sorted(ids) != sorted(self.assignments):
            raise AllocationError("allocation does not cover every interface exactly once")
        if not self.delta_t <= {k for k, v in self.assignments.items() if v is EdgeKind.GENERATIVE}:
            raise AllocationError("next-time placements must be generative assignments")


# -- parsing -----------------------------------------------------------------

def _line_of(text: str, needle: str) -> Optional[int]:
    idx = text.find(needle)
    return None if idx < 0 else text.count("\n", 0, idx) + 1


def parse_hcd(document) -> HcdGraph:
    """Parse an HCD JSON document (text or already-decoded dict)."""
    text = document if isinstance(document, str) else None
    if text is not None:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise HcdParseError(exc.msg, f"column {exc.colno}", exc.lineno) from exc
    else:
        doc = document

    def fail(msg, loc, needle=None):
        line = _line_of(text, needle) if (text and needle) else None
        raise HcdParseError(msg, loc, line)

    if not isinstance(doc, dict):
        fail("document must be a JSON object", "$")
    comps_raw = doc.get("components", [])
    ifaces_raw = doc.get("interfaces", [])
    if not isinstance(comps_raw, list):
        fail("'components' must be a list", "components")
    if not isinstance(ifaces_raw, list):
        fail("'interfaces' must be a list", "interfaces")

    components = []
    seen = set()
    for i, c in enumerate(comps_raw):
        loc = f"components[{i}]"
        if not isinstance(c, dict) or not isinstance(c.get("name"), str) or not c["name"]:
            fail("component needs a non-empty string 'name'", loc)
        name = c["name"]
        if name in seen:
            fail(f"duplicate component name {name!r}", f"{loc}.name", json.dumps(name))
        seen.add(name)
        variables = c.get("variables", [])
        if not isinstance(variables, list) or not all(isinstance(v, str) and v for v in variables):
            fail("'variables' must be a list of non-empty strings", f"{loc}.variables", json.dumps(name))
        region = c.get("region", "")
        if not isinstance(region, str):
            fail("'region' must be a string", f"{loc}.region", json.dumps(name))
        components.append(Component(name, region, tuple(variables)))

    interfaces = []
    pairs = set()
    for i, f in enumerate(ifaces_raw):
        loc = f"interfaces[{i}]"
        if not isinstance(f, dict):
            fail("interface must be an object", loc)
        for end in ("src", "dst"):
            if not isinstance(f.get(end), str):
                fail(f"interface needs a string '{end}'", f"{loc}.{end}")
            if f[end] not in seen:
                fail(f"{end} {f[end]!r} is not a declared component", f"{loc}.{end}", json.dumps(f[end]))
        raw_dir = f.get("direction")
        try:
            direction = Direction.UNANNOTATED if raw_dir is None else Direction(raw_dir)
        except ValueError:
            fail(f"malformed direction {raw_dir!r}; expected feedforward|feedback",
                 f"{loc}.direction", json.dumps(raw_dir))
        delta_t = f.get("delta_t", False)
        if not isinstance(delta_t, bool):
            fail("'delta_t' must be a boolean", f"{loc}.delta_t")
        pair = (f["src"], f["dst"])
        if pair in pairs:
            fail(f"duplicate interface {pair[0]}->{pair[1]}", loc)
        pairs.add(pair)
        interfaces.append(Interface(f["src"], f["dst"], direction, delta_t))

    observed = doc.get("observed", [])
    if not isinstance(observed, list) or not all(isinstance(v, str) for v in observed):
        fail("'observed' must be a list of variable names", "observed")
    graph = HcdGraph(tuple(components), tuple(interfaces), tuple(observed))
    unknown = [v for v in observed if v not in graph.variables]
    if unknown:
        fail(f"observed variables {unknown} are not hosted by any component", "observed")
    return graph


def serialize_hcd(graph: HcdGraph) -> dict:
    doc = {
        "components": [{"name": c.name, "region": c.region, "variables": list(c.variables)}
                       for c in graph.components],
        "interfaces": [{"src": f.src, "dst": f.dst, "direction": f.direction.value,
                        "delta_t": f.delta_t} for f in graph.interfaces],
    }
    if graph.observed:
        doc["observed"] = list(graph.observed)
    return doc


def load_hcd(path) -> HcdGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_hcd(fh.read())


# -- allocation -----------------------------------------------------------------

def allocate(graph: HcdGraph, support: Support = Support.categorical(2)):
    """Map every interface to a generative or inference process.

    Returns ``(GraphicalModel, Allocation)``.  Observed variables are the ones
    the document lists; if it lists none, generative sinks are taken as observed.
    """
    assignments = {}
    delta = set()
    for f in graph.interfaces:
        if f.direction is Direction.UNANNOTATED:
            raise AllocationError(f"interface {f.id} has no feedforward/feedback annotation",
                                  interface=f.id)
        if f.direction is Direction.FEEDFORWARD:
            if f.delta_t:
                raise AllocationError(f"interface {f.id}: delta_t is only valid on feedback",
                                      interface=f.id)
            assignments[f.id] = EdgeKind.INFERENCE
        else:
            assignments[f.id] = EdgeKind.GENERATIVE
            if f.delta_t:
                delta.add(f.id)
    allocation = Allocation(assignments, frozenset(delta))
    allocation.check(graph)

    edges = []
    seen = set()
    for f in graph.interfaces:
        kind = EdgeKind.NEXT_TIME if f.id in delta else assignments[f.id]
        for u in graph.component(f.src).variables:
            for v in graph.component(f.dst).variables:
                if u == v and kind is not EdgeKind.NEXT_TIME:
                    continue
                key = (u, v, kind)
                if key not in seen:
                    seen.add(key)
                    edges.append(Edge(u, v, kind))

    observed = set(graph.observed)
    if not observed:
        gen_out = {e.src for e in edges if e.kind is not EdgeKind.INFERENCE}
        gen_in = {e.dst for e in edges if e.kind is not EdgeKind.INFERENCE}
        observed = gen_in - gen_out
    nodes = tuple(Node(v, NodeKind.OBSERVED if v in observed else NodeKind.LATENT, support)
                  for v in graph.variables)
    model = GraphicalModel(nodes, tuple(edges))
    report = validate_acyclic(model)
    if not report.ok:
        listing = "; ".join(" -> ".join(c + (c[0],)) for c in report.cycles)
        raise AllocationError(f"generative cycle without a delta-t edge: {listing}",
                              cycles=report.cycles)
    return model, allocation


def validate_amortized(model: GraphicalModel) -> ValidationReport:
    """Structural warnings for amortized-inference models (never errors).

    (a) latent nodes with no generative path to any observed node;
    (b) observed nodes with no inference edge leaving them.
    """
    gen = {}
    for e in model.edges:
        if e.kind is not EdgeKind.INFERENCE:
            gen.setdefault(e.src, set()).add(e.dst)
    observed = {n.name for n in model.nodes if n.kind is NodeKind.OBSERVED}
    inf_sources = {e.src for e in model.edges if e.kind is EdgeKind.INFERENCE}
    warnings = []
    for n in model.nodes:
        if n.kind is NodeKind.LATENT:
            stack, seen, hit = list(gen.get(n.name, ())), set(), False
            while stack:
                v = stack.pop()
                if v in observed:
                    hit = True
                    break
                if v not in seen:
                    seen.add(v)
                    stack.extend(gen.get(v, ()))
            if not hit:
                warnings.append(f"latent {n.name!r} has no generative path to an observed node")
    for n in model.nodes:
        if n.kind is NodeKind.OBSERVED and n.name not in inf_sources:
            warnings.append(f"observed {n.name!r} has no outgoing inference edge")
    return ValidationReport(ok=True, warnings=tuple(warnings))
