"""A small embodied agent built from three modules.

Perception (MLDA over multimodal cell percepts) turns each percept into a
topic symbol; an HMM over those symbols filters an abstract state; a
soft-value-iteration planner over learned state transitions picks actions.
After every episode the HMM is refit with Baum-Welch, every stored episode
is re-decoded with Viterbi, and the planner's transition and reward
estimates are recounted from the decoded abstractions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..modules.hmm import HmmParams, baum_welch, forward_filter, viterbi
from ..modules.mlda import MldaState, init_mlda, mlda_gibbs_sweep
from ..modules.planning import TabularMdp, soft_value_iteration
from ..rng import draw_categorical, make_rng
from ..scenarios import AgentWorld
from ..serket import Connection, ConnectionKind


class ProtoAgentError(ValueError):
    pass


@dataclass
class ProtoConfig:
    explore_steps: int = 400
    mlda_sweeps: int = 150
    mlda_alpha: float = 0.1
    mlda_beta: float = 0.05
    fold_in_iters: int = 50
    hmm_self: float = 0.8  # initial emission mass on the matching symbol
    bw_iters: int = 5
    bw_pseudo: float = 0.1
    learn_emission: bool = False
    plan_alpha: float = 0.01
    n_actions: int = 4


def fold_in_topics(state: MldaState, bag, alpha: Optional[float] = None, iters: int = 50) -> np.ndarray:
    """Topic proportions of a new object with the topic-word tables held fixed (EM fold-in)."""
    a = state.alpha if alpha is None else alpha
    rows = [state.phi(m)[:, np.asarray(t, dtype=int)] for m, t in enumerate(bag) if len(t)]
    if not rows:
        return np.full(state.K, 1.0 / state.K)
    lik = np.concatenate(rows, axis=1)  # K x n_tokens
    theta = np.full(state.K, 1.0 / state.K)
    for _ in range(iters):
        r = theta[:, None] * lik
        r /= r.sum(axis=0, keepdims=True)
        theta = (r.sum(axis=1) + a) / (lik.shape[1] + state.K * a)
    return theta


@dataclass
class ProtoAgent:
    perception: MldaState
    temporal: HmmParams
    planner: TabularMdp
    wiring: tuple = ()
    config: ProtoConfig = field(default_factory=ProtoConfig)

    def __post_init__(self):
        if not self.wiring:
            self.wiring = (Connection(ConnectionKind.HEAD_TO_TAIL, "topic", ("perception", "temporal")),
                           Connection(ConnectionKind.HEAD_TO_TAIL, "state", ("temporal", "planner")))

    def symbol_sizes(self) -> dict:
        """Size of each wired variable as seen by each participant."""
        seen = {"topic": {"perception": self.perception.K, "temporal": self.temporal.V},
                "state": {"temporal": self.temporal.K, "planner": self.planner.S}}
        return {c.var: {p: seen[c.var][p] for p in c.participants} for c in self.wiring}

    def check(self) -> None:
        for var, sizes in self.symbol_sizes().items():
            if len(set(sizes.values())) != 1:
                raise ProtoAgentError(f"misaligned symbol spaces on {var!r}: {sizes}")

    def symbol(self, bag) -> int:
        return int(fold_in_topics(self.perception, bag, iters=self.config.fold_in_iters).argmax())


def _near_identity(K: int, V: int, mass: float) -> np.ndarray:
    B = np.full((K, V), (1.0 - mass) / max(V - 1, 1))
    for k in range(K):
        B[k, k % V] = mass
    return B / B.sum(axis=1, keepdims=True)


def build_proto_agent(world: AgentWorld, seed: int = 0, config: Optional[ProtoConfig] = None) -> ProtoAgent:
    """Learn perception from a random exploration walk; start with a uniform planner."""
    cfg = config or ProtoConfig()
    rng = make_rng(seed, "proto-explore")
    cell = tuple(world.start)
    bags = []
    for _ in range(cfg.explore_steps):
        bags.append(world.percept(cell, rng))
        cell = world.step(cell, int(rng.integers(cfg.n_actions)))
    K = world.n_cells
    mlda = init_mlda(bags, K, make_rng(seed, "proto-mlda"), vocab_sizes=(world.vision_vocab, world.audio_vocab),
                     alpha=cfg.mlda_alpha, beta=cfg.mlda_beta)
    mrng = make_rng(seed, "proto-mlda-sweeps")
    for _ in range(cfg.mlda_sweeps):
        mlda_gibbs_sweep(mlda, rng=mrng)
    hmm = HmmParams(np.full(K, 1.0 / K), np.full((K, K), 1.0 / K), _near_identity(K, K, cfg.hmm_self))
    P = np.repeat(np.eye(K)[:, None, :], cfg.n_actions, axis=1)
    planner = TabularMdp(P, np.zeros((K, cfg.n_actions)), alpha=cfg.plan_alpha, gamma=world.gamma)
    agent = ProtoAgent(mlda, hmm, planner, config=cfg)
    agent.check()
    return agent


@dataclass
class EpisodeRecord:
    symbols: list
    actions: list
    cells: list
    reward: float  # discounted return of the episode
    reached: bool


def _replan(agent: ProtoAgent, episodes: list) -> None:
    """Recount transitions and entering-rewards from Viterbi abstractions of every episode."""
    S, A = agent.planner.S, agent.planner.A
    counts = np.zeros((S, A, S))
    rew_sum, rew_n, end_n = np.zeros(S), np.zeros(S), np.zeros(S)
    for ep in episodes:
        states = viterbi(agent.temporal, ep.symbols)
        for t, a in enumerate(ep.actions):
            s, s2 = states[t], states[t + 1]
            counts[s, a, s2] += 1
            last = t == len(ep.actions) - 1
            rew_sum[s2] += 1.0 if (last and ep.reached) else 0.0
            rew_n[s2] += 1
            end_n[s2] += 1.0 if (last and ep.reached) else 0.0
    R_in = np.divide(rew_sum, rew_n, out=np.zeros(S), where=rew_n > 0)
    terminal = np.divide(end_n, rew_n, out=np.zeros(S), where=rew_n > 0) > 0.5
    tot = counts.sum(axis=2, keepdims=True)
    P = np.where(tot > 0, counts / np.maximum(tot, 1), np.eye(S)[:, None, :])
    r = P @ R_in
    P[terminal] = np.eye(S)[terminal][:, None, :]
    r[terminal] = 0.0
    agent.planner = agent.planner.replace(transition=P, reward=r)


def oracle_return(world: AgentWorld) -> float:
    """Return of the hard-VI policy on the true cell MDP (goal absorbing after entry)."""
    from ..oracle import hard_value_iteration
    P, R = world.true_mdp_arrays()
    g = world.index[tuple(world.goal)]
    P[g] = 0.0
    P[g, :, g] = 1.0
    R[g] = 0.0
    Q, V, greedy = hard_value_iteration(P, R, gamma=world.gamma)
    s, ret, disc = world.index[tuple(world.start)], 0.0, 1.0
    for _ in range(world.max_steps):
        if s == g:
            break
        a = int(greedy[s])
        s2 = int(np.argmax(P[s, a]))
        ret += disc * R[s, a]
        disc *= world.gamma
        s = s2
    return float(ret)


@dataclass
class ProtoReport:
    reward_trace: list
    oracle_reward: float
    abstractions: list  # Viterbi-decoded state sequence per episode
    policy_deviation: float  # max |pi - uniform| of the final planner
    episodes: list = field(repr=False, default_factory=list)

    def final_mean(self, last: int = 10) -> float:
        return float(np.mean(self.reward_trace[-last:]))


def run_proto_agent(agent: ProtoAgent, world: AgentWorld, episodes: int, seed: int = 0) -> ProtoReport:
    agent.check()
    rng = make_rng(seed, "proto-episodes")
    history = []
    cache = {}
    sol = soft_value_iteration(agent.planner)
    for _ in range(int(episodes)):
        cell = tuple(world.start)
        symbols, actions, cells = [], [], [cell]
        reached, ret = False, 0.0
        for t in range(world.max_steps):
            bag = world.percept(cell, rng)
            key = tuple(map(tuple, bag))
            if key not in cache:
                cache[key] = agent.symbol(bag)
            symbols.append(cache[key])
            belief = forward_filter(agent.temporal, symbols)[-1]
            s = int(np.argmax(belief))
            a = int(draw_categorical(sol.policy[s], rng))
            actions.append(a)
            cell = world.step(cell, a)
            cells.append(cell)
            if world.goal is not None and cell == tuple(world.goal):
                reached, ret = True, world.gamma ** t
                break
        bag = world.percept(cell, rng)
        key = tuple(map(tuple, bag))
        if key not in cache:
            cache[key] = agent.symbol(bag)
        symbols.append(cache[key])
        history.append(EpisodeRecord(symbols, actions, cells, ret, reached))
        agent.temporal = baum_welch(agent.temporal, [e.symbols for e in history],
                                    max_iters=agent.config.bw_iters,
                                    pseudo_count=agent.config.bw_pseudo,
                                    learn_emission=agent.config.learn_emission).hmm
        _replan(agent, history)
        sol = soft_value_iteration(agent.planner)
    abstractions = [viterbi(agent.temporal, e.symbols).tolist() for e in history]
    dev = float(np.abs(sol.policy - 1.0 / agent.planner.A).max())
    return ProtoReport([e.reward for e in history], oracle_return(world) if world.goal is not None else 0.0,
                       abstractions, dev, history)
