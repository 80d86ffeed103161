"""Module composition bus: endpoints exchange beliefs over shared variables.

Each round every registered endpoint runs one unit of local inference, then
for every connection the bus multiplies the participants' factors into a
consensus.  In distribution mode the consensus is broadcast; in sample mode a
single draw is broadcast and pins the variable inside every participant.
Variables are processed one at a time in connection order, so a sample-mode
round is a systematic Gibbs scan over the shared variables.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core.distributions import CategoricalDist, GaussianParams
from .core.graph import GraphicalModel, ModelError, NodeKind, Support
from .rng import draw_categorical, make_rng


class BusError(RuntimeError):
    pass


class DegenerateConsensusError(BusError):
    def __init__(self, var: str):
        super().__init__(f"consensus for {var!r} has zero total mass")
        self.var = var


class ConnectionKind(str, enum.Enum):
    HEAD_TO_TAIL = "HeadToTail"
    TAIL_TO_TAIL = "TailToTail"
    HEAD_TO_HEAD = "HeadToHead"


class ExchangeMode(str, enum.Enum):
    DISTRIBUTION = "distribution"
    SAMPLE = "sample"


@dataclass(frozen=True, eq=False)
class Belief:
    """A distribution over one shared variable, optionally a drawn sample."""

    var: str
    dist: Union[CategoricalDist, GaussianParams]
    sample: Optional[object] = None

    @classmethod
    def point(cls, var: str, K: int, k: int) -> "Belief":
        return cls(var, CategoricalDist.point_mass(K, k), sample=int(k))

    @property
    def is_sample(self) -> bool:
        return self.sample is not None


# -- endpoints ----------------------------------------------------------------------

class ModuleEndpoint:
    """Base class for anything that can sit on the bus.

    Subclasses provide ``shared_vars``, ``local_update``, ``emit_factor`` and
    ``install_message``.  The bus sets ``exchange_mode`` before each round.
    """

    def __init__(self, id: str):
        self.id = str(id)
        self.exchange_mode = ExchangeMode.DISTRIBUTION

    def shared_vars(self) -> dict:
        return {}

    def local_update(self, rng: np.random.Generator) -> None:
        pass

    def emit_factor(self, var: str) -> Belief:
        raise KeyError(var)

    def install_message(self, var: str, belief: Belief) -> None:
        raise KeyError(var)


def item_var(prefix: str, i: int) -> str:
    return f"{prefix}[{i}]"


class ItemCategoricalEndpoint(ModuleEndpoint):
    """Endpoint exposing one K-valued latent per item as ``prefix[i]``.

    Subclasses implement ``_log_conditional(i)`` (the module's own full
    conditional without incoming messages), ``_set_latent(i, k)`` and
    ``_sweep(rng)``, which should respect ``self.msg`` and ``self.pinned`` and
    may return the message-weighted conditionals it sampled from (an N x K
    array) for Rao-Blackwellized averaging.

    In distribution mode the emitted factor is the running average of the
    message-weighted conditionals with the current message divided out; the
    average restarts whenever an installed message changes.  Endpoints whose
    ``_sweep`` returns exact marginals set ``rao_blackwell = False`` so only
    the latest sweep counts.  In sample mode the emitted factor is the
    instantaneous conditional.
    """

    rao_blackwell = True
    message_tol = 1e-9

    def __init__(self, id: str, prefix: str, n_items: int, K: int, burn_in: int = 0):
        super().__init__(id)
        self.prefix = prefix
        self.n_items = int(n_items)
        self.K = int(K)
        self.burn_in = int(burn_in)
        self.msg = np.zeros((self.n_items, self.K))
        self.pinned = np.full(self.n_items, -1, dtype=int)
        self.connected = np.zeros(self.n_items, dtype=bool)
        self._last_factor = np.zeros((self.n_items, self.K))
        self._acc = np.zeros((self.n_items, self.K))
        self._acc_n = 0
        self._updates = 0
        self._reset = False
        self._index = {item_var(prefix, i): i for i in range(self.n_items)}

    # subclass hooks
    def _log_conditional(self, i: int) -> np.ndarray:
        raise NotImplementedError

    def _set_latent(self, i: int, k: int) -> None:
        raise NotImplementedError

    def _sweep(self, rng) -> Optional[np.ndarray]:
        raise NotImplementedError

    # endpoint contract
    def shared_vars(self) -> dict:
        return {v: Support.categorical(self.K) for v in self._index}

    def item_of(self, var: str) -> int:
        try:
            return self._index[var]
        except KeyError:
            raise KeyError(f"{self.id} has no shared variable {var!r}") from None

    def belief(self, i: int) -> CategoricalDist:
        """Own conditional times incoming message, normalized."""
        return CategoricalDist.from_log_weights(self._log_conditional(i) + self.msg[i])

    def local_update(self, rng) -> None:
        if self.exchange_mode == ExchangeMode.SAMPLE:
            self._sweep(rng)
            return
        self.pinned[:] = -1
        probs = self._sweep(rng)
        self._updates += 1
        if self._updates <= self.burn_in:
            return
        if probs is None:
            probs = np.array([self.belief(i).probs for i in range(self.n_items)])
        if not self.rao_blackwell or self._reset:
            self._acc[:] = 0.0
            self._acc_n = 0
            self._reset = False
        self._acc += probs
        self._acc_n += 1

    def averaged_belief(self, i: int) -> np.ndarray:
        if self._acc_n == 0:
            return self.belief(i).probs
        return self._acc[i] / self._acc_n

    def emit_factor(self, var: str) -> Belief:
        i = self.item_of(var)
        self.connected[i] = True
        if self.exchange_mode == ExchangeMode.SAMPLE:
            logf = self._log_conditional(i)
        else:
            with np.errstate(divide="ignore"):
                logf = np.log(self.averaged_belief(i)) - self.msg[i]
        dist = CategoricalDist.from_log_weights(logf)
        with np.errstate(divide="ignore"):
            self._last_factor[i] = np.log(dist.probs)
        return Belief(var, dist)

    def install_message(self, var: str, belief: Belief) -> None:
        i = self.item_of(var)
        if belief.is_sample:
            k = int(belief.sample)
            self.pinned[i] = k
            self._set_latent(i, k)
            return
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.log(belief.dist.probs) - self._last_factor[i]
        own_zero = ~np.isfinite(self._last_factor[i])
        m[own_zero] = 0.0
        m[np.isnan(m)] = 0.0
        if np.isfinite(m).any():
            m = m - m[np.isfinite(m)].max()
        with np.errstate(invalid="ignore"):
            diff = np.nan_to_num(np.abs(m - self.msg[i]), nan=0.0)
        if diff.max() > self.message_tol:
            self._reset = True
        self.msg[i] = m


# -- bus ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Connection:
    kind: ConnectionKind
    var: str
    participants: tuple

    def __post_init__(self):
        object.__setattr__(self, "kind", ConnectionKind(self.kind))
        object.__setattr__(self, "participants", tuple(self.participants))


@dataclass
class RoundReport:
    round: int
    mode: ExchangeMode
    kl: dict  # var -> symmetric KL to the previous consensus

    @property
    def max_kl(self) -> float:
        return max(self.kl.values(), default=0.0)


@dataclass
class ConvergenceReport:
    rounds: int
    converged: bool
    max_kl: float
    history: list = field(default_factory=list)

    @property
    def reason(self) -> str:
        return "converged" if self.converged else "max_rounds"


def categorical_consensus(factors: list) -> np.ndarray:
    """Normalized product of categorical factors, summed in log space in the given order."""
    with np.errstate(divide="ignore"):
        total = np.zeros_like(factors[0], dtype=float)
        for f in factors:
            total = total + np.log(f)
    m = total.max()
    if not np.isfinite(m):
        return None
    p = np.exp(total - m)
    return p / p.sum()


def gaussian_consensus(factors: list) -> GaussianParams:
    """Product of Gaussian factors via summed precisions."""
    prec = sum(np.linalg.inv(f.covariance) for f in factors)
    h = sum(np.linalg.solve(f.covariance, f.mean) for f in factors)
    cov = np.linalg.inv(prec)
    return GaussianParams(cov @ h, 0.5 * (cov + cov.T))


def _sym_kl(prev, new) -> float:
    if isinstance(new, GaussianParams):
        return _gauss_sym_kl(prev, new)
    p, q = np.asarray(prev, float), np.asarray(new, float)
    pz, qz = p > 0, q > 0
    if not np.array_equal(pz, qz):
        return math.inf
    return float(((p[pz] - q[pz]) * (np.log(p[pz]) - np.log(q[pz]))).sum())


def _gauss_sym_kl(p: GaussianParams, q: GaussianParams) -> float:
    def kl(a, b):
        D = a.mean.size
        binv = np.linalg.inv(b.covariance)
        d = b.mean - a.mean
        return 0.5 * (np.trace(binv @ a.covariance) + d @ binv @ d - D
                      + np.linalg.slogdet(b.covariance)[1] - np.linalg.slogdet(a.covariance)[1])
    return float(kl(p, q) + kl(q, p))


class Bus:
    """Registers endpoints, wires connections and runs exchange rounds."""

    def __init__(self, seed: int = 0, damping: float = 1.0):
        if not 0.0 < damping <= 1.0:
            raise BusError("damping must lie in (0, 1]")
        self.seed = int(seed)
        self.damping = float(damping)
        self.endpoints: dict = {}
        self.connections: list = []
        self.consensus: dict = {}
        self.samples: dict = {}  # last broadcast sample per variable
        self.rounds_run = 0
        self._rngs: dict = {}
        self._bus_rng = make_rng(self.seed, "bus")

    def register(self, endpoint: ModuleEndpoint) -> str:
        if self.rounds_run:
            raise BusError("cannot register modules after the bus has started running")
        if endpoint.id in self.endpoints:
            raise BusError(f"duplicate module id {endpoint.id!r}")
        self.endpoints[endpoint.id] = endpoint
        self._rngs[endpoint.id] = make_rng(self.seed, endpoint.id)
        return endpoint.id

    def rng_for(self, module_id: str) -> np.random.Generator:
        return self._rngs[module_id]

    def connect(self, connection: Connection) -> None:
        if self.rounds_run:
            raise BusError("cannot add connections after the bus has started running")
        parts = connection.participants
        if len(parts) < 2 or len(set(parts)) != len(parts):
            raise BusError("a connection needs at least two distinct participants")
        missing = [p for p in parts if p not in self.endpoints]
        if missing:
            raise BusError(f"unknown endpoint(s) {missing}")
        if any(c.var == connection.var for c in self.connections):
            raise BusError(f"variable {connection.var!r} is already connected")
        supports = []
        for p in parts:
            sv = self.endpoints[p].shared_vars()
            if connection.var not in sv:
                raise BusError(f"{p!r} does not declare {connection.var!r}")
            supports.append(sv[connection.var])
        if any(s != supports[0] for s in supports):
            raise BusError(f"support mismatch on {connection.var!r}: {[str(s) for s in supports]}")
        if supports[0].kind not in ("categorical", "real"):
            raise BusError("shared variables must be categorical or real")
        if connection.kind == ConnectionKind.HEAD_TO_HEAD and supports[0].kind != "categorical":
            raise BusError("head-to-head connections require a categorical variable")
        self.connections.append(connection)
        K = supports[0].size
        if supports[0].kind == "categorical":
            self.consensus[connection.var] = np.full(K, 1.0 / K)
        else:
            self.consensus[connection.var] = GaussianParams(np.zeros(K), np.eye(K) * 1e6)

    def _combine(self, conn: Connection):
        factors = [self.endpoints[p].emit_factor(conn.var) for p in sorted(conn.participants)]
        for f in factors:
            if f.var != conn.var:
                raise BusError(f"endpoint emitted a factor for {f.var!r} instead of {conn.var!r}")
        if isinstance(factors[0].dist, GaussianParams):
            return gaussian_consensus([f.dist for f in factors])
        probs = categorical_consensus([f.dist.probs for f in factors])
        if probs is None:
            raise DegenerateConsensusError(conn.var)
        return probs

    def run_round(self, mode=ExchangeMode.DISTRIBUTION, rng: Optional[np.random.Generator] = None) -> RoundReport:
        if not self.endpoints:
            raise BusError("no modules registered")
        mode = ExchangeMode(mode)
        rng = self._bus_rng if rng is None else rng
        for eid in sorted(self.endpoints):
            ep = self.endpoints[eid]
            ep.exchange_mode = mode
            ep.local_update(self._rngs[eid])
        kl = {}
        for conn in self.connections:
            new = self._combine(conn)
            prev = self.consensus[conn.var]
            if isinstance(new, np.ndarray) and self.damping < 1.0 and self.rounds_run > 0:
                new = self.damping * new + (1.0 - self.damping) * prev
                new = new / new.sum()
            kl[conn.var] = _sym_kl(prev, new if not isinstance(new, np.ndarray) else new)
            self.consensus[conn.var] = new
            if isinstance(new, GaussianParams):
                dist = new
                sample = rng.multivariate_normal(new.mean, new.covariance) if mode == ExchangeMode.SAMPLE else None
            else:
                dist = CategoricalDist(new)
                sample = draw_categorical(new, rng) if mode == ExchangeMode.SAMPLE else None
            if sample is not None:
                self.samples[conn.var] = sample
            if sample is not None and not isinstance(new, GaussianParams):
                belief = Belief.point(conn.var, len(new), sample)
            else:
                belief = Belief(conn.var, dist, sample)
            for p in sorted(conn.participants):
                self.endpoints[p].install_message(conn.var, belief)
        self.rounds_run += 1
        return RoundReport(self.rounds_run, mode, kl)

    def run_until(self, max_rounds: int, tol: float, mode=ExchangeMode.DISTRIBUTION) -> ConvergenceReport:
        history = []
        rep = None
        for _ in range(int(max_rounds)):
            rep = self.run_round(mode)
            history.append(rep.max_kl)
            if rep.max_kl < tol or math.isinf(tol):
                return ConvergenceReport(rep.round, True, rep.max_kl, history)
        return ConvergenceReport(self.rounds_run, False, rep.max_kl if rep else math.inf, history)

    def consensus_probs(self, var: str) -> np.ndarray:
        return self.consensus[var]


def connect_items(bus: Bus, kind, prefix: str, participants, n_items: int) -> None:
    """Connect ``prefix[0] .. prefix[n-1]`` across the same participants."""
    for i in range(n_items):
        bus.connect(Connection(ConnectionKind(kind), item_var(prefix, i), tuple(participants)))


# -- reference decomposition ------------------------------------------------------------

def _attach_parameters(model: GraphicalModel, comps: list, cutset: set, order: dict) -> list:
    """Fold components made only of parameter nodes into a neighbouring module.

    A parameter whose children are all cut nodes joins the component of a
    non-parameter co-parent of one of those children; failing that, the
    component of the next declared node that borders the same cut node.
    """
    kinds = {n.name: n.kind for n in model.nodes}
    where = {n: i for i, c in enumerate(comps) for n in c}
    nbrs = {}
    for e in model.edges:
        nbrs.setdefault(e.src, set()).add(e.dst)
        nbrs.setdefault(e.dst, set()).add(e.src)
    merged = {}
    for i, comp in enumerate(comps):
        if any(kinds[n] != NodeKind.PARAMETER for n in comp):
            continue
        children = {e.dst for e in model.edges if e.src in comp and e.dst in cutset}
        coparents = sorted((e.src for e in model.edges if e.dst in children and e.src not in cutset
                            and e.src not in comp and kinds[e.src] != NodeKind.PARAMETER), key=order.get)
        target = None
        if coparents:
            target = where[coparents[0]]
        else:
            first = min(order[n] for n in comp)
            later = sorted((n for n in where if where[n] != i and order[n] > first
                            and nbrs.get(n, set()) & children), key=order.get)
            if later:
                target = where[later[0]]
        if target is not None:
            merged[i] = target
    out = [set(c) for c in comps]
    for i, t in merged.items():
        while t in merged:
            t = merged[t]
        out[t] |= out[i]
    return [c for i, c in enumerate(out) if i not in merged]


def decompose_reference(model: GraphicalModel, cut) -> list:
    """Split ``model`` at the ``cut`` nodes into sub-models.

    Sub-models are the connected components left after removing the cut
    nodes (parameter-only components folded into a neighbour, see
    ``_attach_parameters``); each cut node is copied into every sub-model it
    borders.  Every edge lands in exactly one sub-model.
    """
    import networkx as nx

    cut = list(dict.fromkeys(cut))
    names = [n.name for n in model.nodes]
    unknown = [c for c in cut if c not in names]
    if unknown:
        raise ModelError(f"cut nodes not in model: {unknown}")
    cutset = set(cut)
    g = nx.Graph()
    g.add_nodes_from(n for n in names if n not in cutset)
    g.add_edges_from((e.src, e.dst) for e in model.edges
                     if e.src not in cutset and e.dst not in cutset)
    order = {n: i for i, n in enumerate(names)}
    comps = [set(c) for c in nx.connected_components(g)]
    comps = _attach_parameters(model, comps, cutset, order)
    comps = sorted((sorted(c, key=order.get) for c in comps), key=lambda c: order[c[0]])
    groups = [{"nodes": set(c), "edges": []} for c in comps]
    owner = {n: gi for gi, grp in enumerate(groups) for n in grp["nodes"]}
    leftover = []
    for e in model.edges:
        if e.src in cutset and e.dst in cutset:
            leftover.append(e)
            continue
        inner = e.dst if e.src in cutset else e.src
        grp = groups[owner[inner]]
        grp["edges"].append(e)
        grp["nodes"].update((e.src, e.dst))
    for e in leftover:
        home = next((g_ for g_ in groups if e.src in g_["nodes"] and e.dst in g_["nodes"]), None)
        if home is None:
            home = {"nodes": {e.src, e.dst}, "edges": []}
            groups.append(home)
        home["edges"].append(e)
    for c in cut:
        bordering = sum(1 for grp in groups if c in grp["nodes"])
        if bordering < 2:
            raise ModelError(f"cutting at {c!r} does not separate the model (borders {bordering} sub-model)")
    by_name = {n.name: n for n in model.nodes}
    out = []
    for grp in groups:
        nodes = tuple(by_name[n] for n in names if n in grp["nodes"])
        edges = tuple(e for e in model.edges if e in grp["edges"])
        out.append(GraphicalModel(nodes, edges))
    return out
