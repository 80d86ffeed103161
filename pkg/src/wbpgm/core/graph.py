"""Graphical-model structure: typed nodes, generative / inference / next-time edges."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import networkx as nx


class EdgeKind(str, Enum):
    GENERATIVE = "generative"
    INFERENCE = "inference"
    NEXT_TIME = "next_time"


class NodeKind(str, Enum):
    LATENT = "latent"
    OBSERVED = "observed"
    PARAMETER = "parameter"


class ModelError(ValueError):
    pass


_SUPPORT_RE = re.compile(r"^\s*(categorical|real)\s*\(\s*(\d+)\s*\)\s*$")


@dataclass(frozen=True)
class Support:
    kind: str  # "categorical" | "real"
    size: int

    @classmethod
    def parse(cls, text: str) -> "Support":
        m = _SUPPORT_RE.match(str(text))
        if not m or int(m.group(2)) < 1:
            raise ModelError(f"malformed support {text!r}; expected categorical(K) or real(D)")
        return cls(m.group(1), int(m.group(2)))

    @classmethod
    def categorical(cls, K: int) -> "Support":
        return cls("categorical", int(K))

    @classmethod
    def real(cls, D: int) -> "Support":
        return cls("real", int(D))

    def __str__(self) -> str:
        return f"{self.kind}({self.size})"


@dataclass(frozen=True)
class Node:
    name: str
    kind: NodeKind = NodeKind.LATENT
    support: Support = Support("categorical", 2)
    time_indexed: Optional[bool] = None


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: EdgeKind = EdgeKind.GENERATIVE


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    cycles: tuple = ()
    warnings: tuple = ()


@dataclass(frozen=True)
class GraphicalModel:
    nodes: tuple = ()
    edges: tuple = ()

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple(self.edges)
        names = [n.name for n in nodes]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ModelError(f"duplicate node names: {sorted(dup)}")
        known = set(names)
        for e in edges:
            for end in (e.src, e.dst):
                if end not in known:
                    raise ModelError(f"edge {e.src}->{e.dst} references unknown node {end!r}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    @property
    def names(self) -> list:
        return [n.name for n in self.nodes]

    def edges_of(self, *kinds: EdgeKind) -> list:
        return [e for e in self.edges if e.kind in kinds]

    def time_indexed(self) -> set:
        """Names of nodes that get one copy per time step when unrolled.

        Explicit ``time_indexed`` flags win.  Otherwise a non-parameter node is
        time-indexed iff its weakly connected component contains a next-time edge.
        """
        g = nx.MultiGraph()
        g.add_nodes_from(self.names)
        g.add_edges_from((e.src, e.dst) for e in self.edges)
        temporal_components = set()
        for i, comp in enumerate(nx.connected_components(g)):
            if any(e.kind is EdgeKind.NEXT_TIME and e.src in comp for e in self.edges):
                temporal_components |= comp
        out = set()
        for n in self.nodes:
            if n.time_indexed is not None:
                if n.time_indexed:
                    out.add(n.name)
            elif n.kind is not NodeKind.PARAMETER and n.name in temporal_components:
                out.add(n.name)
        return out

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            d = {"name": n.name, "kind": n.kind.value, "support": str(n.support)}
            if n.time_indexed is not None:
                d["time_indexed"] = n.time_indexed
            nodes.append(d)
        edges = [{"src": e.src, "dst": e.dst, "kind": e.kind.value} for e in self.edges]
        return {"nodes": nodes, "edges": edges}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "GraphicalModel":
        try:
            nodes = [Node(d["name"], NodeKind(d.get("kind", "latent")),
                          Support.parse(d.get("support", "categorical(2)")),
                          d.get("time_indexed"))
                     for d in doc.get("nodes", [])]
            edges = [Edge(d["src"], d["dst"], EdgeKind(d.get("kind", "generative")))
                     for d in doc.get("edges", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed model document: {exc}") from exc
        return cls(tuple(nodes), tuple(edges))

    @classmethod
    def from_json(cls, text: str) -> "GraphicalModel":
        return cls.from_dict(json.loads(text))


def generative_cycles(model: GraphicalModel) -> list:
    g = nx.DiGraph()
    g.add_nodes_from(model.names)
    g.add_edges_from((e.src, e.dst) for e in model.edges_of(EdgeKind.GENERATIVE))
    cycles = [list(c) for c in nx.simple_cycles(g)]
    # canonical rotation so reports are stable
    out = []
    for c in cycles:
        i = min(range(len(c)), key=lambda j: model.names.index(c[j]))
        out.append(tuple(c[i:] + c[:i]))
    return sorted(out, key=lambda c: (len(c), [model.names.index(n) for n in c]))


def validate_acyclic(model: GraphicalModel) -> ValidationReport:
    """Report every cycle made purely of generative edges.

    Next-time edges do not count: a loop closed through one is a time-advancing
    circulation and is accepted.
    """
    cycles = generative_cycles(model)
    return ValidationReport(ok=not cycles, cycles=tuple(cycles))


def unroll(model: GraphicalModel, T: int) -> GraphicalModel:
    """Expand next-time edges over ``T`` steps into a plain acyclic model."""
    if int(T) != T or T < 1:
        raise ModelError("horizon T must be a positive integer")
    report = validate_acyclic(model)
    if not report.ok:
        raise ModelError(f"cannot unroll a model with generative cycles: {list(report.cycles)}")
    temporal = model.time_indexed()
    for e in model.edges_of(EdgeKind.NEXT_TIME):
        if e.src not in temporal or e.dst not in temporal:
            raise ModelError(f"next-time edge {e.src}->{e.dst} touches a static node")

    def copies(name):
        return [f"{name}[{t}]" for t in range(1, T + 1)] if name in temporal else [name]

    nodes = []
    for n in model.nodes:
        for c in copies(n.name):
            nodes.append(Node(c, n.kind, n.support, None if c == n.name else True))
    edges = []
    for e in model.edges:
        if e.kind is EdgeKind.NEXT_TIME:
            for t in range(1, T):
                edges.append(Edge(f"{e.src}[{t}]", f"{e.dst}[{t + 1}]", EdgeKind.GENERATIVE))
            continue
        src_t, dst_t = e.src in temporal, e.dst in temporal
        if src_t and dst_t:
            edges.extend(Edge(f"{e.src}[{t}]", f"{e.dst}[{t}]", e.kind) for t in range(1, T + 1))
        else:
            edges.extend(Edge(s, d, e.kind) for s in copies(e.src) for d in copies(e.dst))
    return GraphicalModel(tuple(nodes), tuple(edges))


_SHAPES = {NodeKind.LATENT: "ellipse", NodeKind.OBSERVED: "doublecircle", NodeKind.PARAMETER: "box"}
_STYLES = {
    EdgeKind.GENERATIVE: "style=solid",
    EdgeKind.INFERENCE: "style=dashed",
    EdgeKind.NEXT_TIME: 'style=bold, label="Δt"',
}


def _q(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(model: GraphicalModel, name: str = "pgm") -> str:
    lines = [f"digraph {_q(name)} {{"]
    for n in model.nodes:
        lines.append(f"  {_q(n.name)} [shape={_SHAPES[n.kind]}];")
    for e in model.edges:
        lines.append(f"  {_q(e.src)} -> {_q(e.dst)} [{_STYLES[e.kind]}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def model_from_edges(edges: Iterable, observed: Iterable = (), support: Support = Support.categorical(2)) -> GraphicalModel:
    """Convenience builder: ``edges`` are ``(src, dst[, kind])`` tuples."""
    obs = set(observed)
    names: list = []
    es = []
    for e in edges:
        src, dst = e[0], e[1]
        kind = EdgeKind(e[2]) if len(e) > 2 else EdgeKind.GENERATIVE
        for n in (src, dst):
            if n not in names:
                names.append(n)
        es.append(Edge(src, dst, kind))
    nodes = [Node(n, NodeKind.OBSERVED if n in obs else NodeKind.LATENT, support) for n in names]
    return GraphicalModel(tuple(nodes), tuple(es))
