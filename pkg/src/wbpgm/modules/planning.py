"""Control as inference on tabular MDPs and one-step expected free energy on POMDPs.

Rewards enter the optimality likelihood as ``p(O=1 | s, a) = exp((r - r_max) / alpha)``.
Soft value iteration uses the risk-neutral backup ``Q = r + gamma * E[V(s')]``,
which coincides with exact trajectory inference for deterministic dynamics.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ..core.distributions import CategoricalDist, entropy, kl_divergence

ROW_TOL = 1e-9
MAX_TRAJECTORIES = 10 ** 6
GOAL_FLOOR = -1e6


class MdpError(ValueError):
    pass


class TrajectorySizeError(ValueError):
    pass


def _rows_ok(name, a):
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise MdpError(f"{name} entries must be finite and >= 0")
    if np.any(np.abs(a.sum(axis=-1) - 1.0) > ROW_TOL):
        raise MdpError(f"{name} rows must sum to 1")


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray  # S x A x S
    reward: np.ndarray  # S x A
    alpha: float = 1.0
    gamma: Optional[float] = None
    horizon: Optional[int] = None
    initial: Optional[np.ndarray] = None

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise MdpError("transition must be S x A x S and reward S x A")
        _rows_ok("transition", P)
        if np.any(np.isnan(R)) or np.any(R == np.inf):
            raise MdpError("rewards must be finite or -inf")
        if (self.gamma is None) == (self.horizon is None):
            raise MdpError("configure exactly one of gamma (discounted) or horizon (finite)")
        if self.gamma is not None and not 0.0 <= self.gamma < 1.0:
            raise MdpError("gamma must lie in [0, 1)")
        if self.horizon is not None and (int(self.horizon) != self.horizon or self.horizon < 1):
            raise MdpError("horizon must be a positive integer")
        init = np.full(P.shape[0], 1.0 / P.shape[0]) if self.initial is None else self.initial
        init = _frozen(init)
        if init.shape != (P.shape[0],):
            raise MdpError("initial distribution must have S entries")
        _rows_ok("initial", init)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def S(self) -> int:
        return self.reward.shape[0]

    @property
    def A(self) -> int:
        return self.reward.shape[1]

    def replace(self, **kw) -> "TabularMdp":
        fields = dict(transition=self.transition, reward=self.reward, alpha=self.alpha,
                      gamma=self.gamma, horizon=self.horizon, initial=self.initial)
        fields.update(kw)
        return TabularMdp(**fields)

    def optimality(self) -> "OptimalityModel":
        return OptimalityModel.from_mdp(self)


@dataclass(frozen=True, eq=False)
class OptimalityModel:
    log_prob_opt: np.ndarray

    def __post_init__(self):
        lp = _frozen(self.log_prob_opt)
        if np.any(lp > 0):
            raise MdpError("optimality log-probabilities must be <= 0")
        object.__setattr__(self, "log_prob_opt", lp)

    @classmethod
    def from_mdp(cls, mdp: TabularMdp) -> "OptimalityModel":
        if mdp.alpha <= 0:
            raise MdpError("temperature alpha must be > 0")
        r = mdp.reward
        return cls((r - r[np.isfinite(r)].max()) / mdp.alpha)


@dataclass(frozen=True, eq=False)
class TabularPomdp:
    mdp: TabularMdp
    obs_model: np.ndarray  # S x O
    preference: np.ndarray  # O

    def __post_init__(self):
        obs = _frozen(self.obs_model)
        pref = self.preference.probs if isinstance(self.preference, CategoricalDist) else self.preference
        pref = _frozen(pref)
        if obs.ndim != 2 or obs.shape[0] != self.mdp.S:
            raise MdpError("observation model must be S x O")
        _rows_ok("obs_model", obs)
        if pref.shape != (obs.shape[1],):
            raise MdpError("preference must have O entries")
        _rows_ok("preference", pref)
        object.__setattr__(self, "obs_model", obs)
        object.__setattr__(self, "preference", pref)

    @property
    def O(self) -> int:
        return self.obs_model.shape[1]


# -- soft value iteration ----------------------------------------------------------

def _expect(P, V):
    """E_{s'}[V(s')] for every (s, a), treating 0 * -inf as 0."""
    finite = np.isfinite(V)
    out = np.einsum("sat,t->sa", P, np.where(finite, V, 0.0))
    if not finite.all():
        doomed = P[:, :, ~finite].sum(axis=2) > 0
        out = np.where(doomed, -np.inf, out)
    return out


def _soft_max(Q, alpha):
    V = alpha * logsumexp(Q / alpha, axis=1)
    with np.errstate(invalid="ignore"):
        pol = np.exp((Q - V[:, None]) / alpha)
    pol = np.nan_to_num(pol, nan=0.0)
    dead = pol.sum(axis=1) == 0
    pol[dead] = 1.0 / Q.shape[1]
    return V, pol / pol.sum(axis=1, keepdims=True)


@dataclass
class SoftVIResult:
    q: np.ndarray  # S x A (first step for finite horizons)
    v: np.ndarray  # S
    policy: np.ndarray  # S x A, rows are action distributions
    q_steps: Optional[np.ndarray] = None  # T x S x A for finite horizons
    v_steps: Optional[np.ndarray] = None
    policy_steps: Optional[np.ndarray] = None
    residual: float = 0.0
    iterations: int = 0

    def policy_dists(self) -> list:
        return [CategoricalDist(row) for row in self.policy]

    def step_policy(self, t: int) -> np.ndarray:
        if self.policy_steps is None:
            return self.policy
        return self.policy_steps[min(t, len(self.policy_steps) - 1)]


def soft_value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iters: int = 1_000_000) -> SoftVIResult:
    """Maximum-entropy (soft) Bellman backup.

    ``V(s) = alpha * log sum_a exp(Q(s, a) / alpha)``,
    ``Q(s, a) = r(s, a) + gamma * E[V(s')]`` and
    ``pi(a | s) = exp((Q(s, a) - V(s)) / alpha)``.
    Finite horizons use the backward recursion with ``gamma = 1``.
    """
    alpha = mdp.alpha
    if not alpha > 0:
        raise MdpError("temperature alpha must be > 0")
    P, R = mdp.transition, mdp.reward
    if mdp.horizon is not None:
        T = int(mdp.horizon)
        qs = np.empty((T,) + R.shape)
        vs = np.empty((T, mdp.S))
        ps = np.empty((T,) + R.shape)
        Q = R.copy()
        for t in range(T - 1, -1, -1):
            if t < T - 1:
                Q = R + _expect(P, vs[t + 1])
            vs[t], ps[t] = _soft_max(Q, alpha)
            qs[t] = Q
        return SoftVIResult(qs[0], vs[0], ps[0], qs, vs, ps)
    g = mdp.gamma
    Q = R.copy()
    V, _ = _soft_max(Q, alpha)
    residual = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        Q_new = R + g * _expect(P, V) if g > 0 else R.copy()
        with np.errstate(invalid="ignore"):
            diff = np.abs(np.where(np.isfinite(Q_new) | np.isfinite(Q), Q_new - Q, 0.0))
        residual = float(np.nan_to_num(diff, nan=0.0).max())
        Q = Q_new
        V, _ = _soft_max(Q, alpha)
        if residual < tol:
            break
    V, pol = _soft_max(Q, alpha)
    return SoftVIResult(Q, V, pol, residual=residual, iterations=it)


# -- trajectory posterior -------------------------------------------------------------

@dataclass
class TrajectoryPosterior:
    trajectories: np.ndarray  # N x T x 2 of (state, action)
    probs: np.ndarray

    def state_marginal(self, t: int, S: int) -> np.ndarray:
        return np.bincount(self.trajectories[:, t, 0], weights=self.probs, minlength=S)

    def action_conditional(self, t: int, s: int, A: int) -> Optional[np.ndarray]:
        """p(a_t | s_t = s, O = 1); ``None`` if ``s`` is unreachable at step ``t``."""
        mask = self.trajectories[:, t, 0] == s
        mass = self.probs[mask].sum()
        if mass <= 0:
            return None
        return np.bincount(self.trajectories[mask, t, 1], weights=self.probs[mask], minlength=A) / mass

    def as_dict(self) -> dict:
        return {tuple(map(tuple, tr)): p for tr, p in zip(self.trajectories.tolist(), self.probs)}


def trajectory_posterior(mdp: TabularMdp, T: int) -> TrajectoryPosterior:
    """p(tau | O_1:T = 1) over all length-T (state, action) trajectories."""
    S, A = mdp.S, mdp.A
    n = (S * A) ** T
    if n > MAX_TRAJECTORIES:
        raise TrajectorySizeError(f"S^T * A^T = {n} exceeds {MAX_TRAJECTORIES}")
    opt = OptimalityModel.from_mdp(mdp).log_prob_opt
    codes = np.arange(n)
    digits = np.empty((n, T), dtype=int)
    for t in range(T - 1, -1, -1):
        digits[:, t] = codes % (S * A)
        codes //= S * A
    s = digits // A
    a = digits % A
    with np.errstate(divide="ignore"):
        logw = np.log(mdp.initial[s[:, 0]])
        logP = np.log(mdp.transition)
    for t in range(T):
        if t > 0:
            logw = logw + logP[s[:, t - 1], a[:, t - 1], s[:, t]]
        logw = logw + opt[s[:, t], a[:, t]] - np.log(A)
    keep = np.isfinite(logw)
    logw = logw[keep]
    probs = np.exp(logw - logsumexp(logw))
    traj = np.stack([s[keep], a[keep]], axis=2)
    return TrajectoryPosterior(traj, probs / probs.sum())


def cai_divergence(mdp: TabularMdp) -> float:
    """Largest TV between the soft-VI policy and exact posterior action conditionals.

    Zero for deterministic dynamics; for stochastic dynamics this measures the
    gap between the risk-neutral backup and optimism-biased exact inference.
    """
    if mdp.horizon is None:
        raise MdpError("divergence is measured on finite-horizon problems")
    res = soft_value_iteration(mdp)
    post = trajectory_posterior(mdp, int(mdp.horizon))
    worst = 0.0
    for t in range(int(mdp.horizon)):
        for s in range(mdp.S):
            cond = post.action_conditional(t, s, mdp.A)
            if cond is not None:
                worst = max(worst, 0.5 * float(np.abs(cond - res.policy_steps[t][s]).sum()))
    return worst


# -- expected free energy ----------------------------------------------------------

@dataclass
class EfeResult:
    g: np.ndarray
    risk: np.ndarray
    ambiguity: np.ndarray

    def best_action(self) -> int:
        return int(np.argmin(self.g))


def efe_action_values(pomdp: TabularPomdp, belief) -> EfeResult:
    """One-step expected free energy ``G(a) = risk(a) + ambiguity(a)``.

    Risk is ``KL[q(o' | a) || preference]`` and is ``+inf`` when the preference
    rules out an observation the action predicts.  Ambiguity is the expected
    entropy of the observation model under ``q(s' | a)``.
    """
    b = belief.probs if isinstance(belief, CategoricalDist) else CategoricalDist(belief).probs
    if b.shape != (pomdp.mdp.S,):
        raise MdpError("belief must be over the POMDP's states")
    q_s = np.einsum("s,sat->at", b, pomdp.mdp.transition)
    q_o = q_s @ pomdp.obs_model
    h = np.array([entropy(row) for row in pomdp.obs_model])
    risk = np.array([kl_divergence(q_o[a], pomdp.preference) for a in range(pomdp.mdp.A)])
    amb = q_s @ h
    return EfeResult(risk + amb, risk, amb)


# -- goal-directed planning ----------------------------------------------------------

@dataclass
class PlanResult:
    actions: list
    states: list
    solution: SoftVIResult

    @property
    def final_state(self) -> int:
        return self.states[-1]


def plan_to_goal(mdp: TabularMdp, goal_log_reward, start: int, max_steps: Optional[int] = None,
                 goal_tol: float = 0.0) -> PlanResult:
    """Soft-VI with ``r(s, a) = goal_log_reward(s)``, then a greedy rollout from ``start``.

    The rollout follows the most probable action and most probable successor
    and stops at a goal state (within ``goal_tol`` of the best log reward),
    when the chosen action leaves the state unchanged, or after ``max_steps``.
    """
    g = np.asarray(goal_log_reward, dtype=float)
    if g.shape != (mdp.S,):
        raise MdpError("goal log-reward must have one entry per state")
    if not np.isfinite(g).any():
        raise MdpError("goal log-reward is -inf everywhere")
    g = np.where(np.isfinite(g), g, GOAL_FLOOR)
    reward = np.repeat(g[:, None], mdp.A, axis=1)
    sol = soft_value_iteration(mdp.replace(reward=reward))
    goals = set(np.flatnonzero(g >= g.max() - goal_tol).tolist())
    limit = max_steps if max_steps is not None else (mdp.horizon or 4 * mdp.S)
    s = int(start)
    states, actions = [s], []
    for t in range(limit):
        if s in goals:
            break
        a = int(np.argmax(sol.step_policy(t)[s]))
        nxt = int(np.argmax(mdp.transition[s, a]))
        if nxt == s:
            break
        actions.append(a)
        states.append(nxt)
        s = nxt
    return PlanResult(actions, states, sol)


MOVES = {"N": (0, -1), "E": (1, 0), "S": (0, 1), "W": (-1, 0), "stay": (0, 0)}


@dataclass
class GridIndex:
    """Maps free grid cells to MDP state indices."""

    cells: list  # state index -> (x, y)
    index: dict = field(default_factory=dict)  # (x, y) -> state index
    actions: tuple = ("N", "E", "S", "W", "stay")


def grid_navigation_mdp(free, gamma: float = 0.95, alpha: float = 1.0, stay: bool = True,
                        reward=None) -> tuple:
    """Deterministic 4-neighbour navigation MDP over the free cells of ``free[y][x]``."""
    free = np.asarray(free, dtype=bool)
    H, W = free.shape
    cells = [(x, y) for y in range(H) for x in range(W) if free[y, x]]
    index = {c: i for i, c in enumerate(cells)}
    names = ("N", "E", "S", "W", "stay") if stay else ("N", "E", "S", "W")
    S, A = len(cells), len(names)
    P = np.zeros((S, A, S))
    for i, (x, y) in enumerate(cells):
        for a, name in enumerate(names):
            dx, dy = MOVES[name]
            j = index.get((x + dx, y + dy), i)
            P[i, a, j] = 1.0
    R = np.zeros((S, A)) if reward is None else reward
    mdp = TabularMdp(P, R, alpha=alpha, gamma=gamma)
    return mdp, GridIndex(cells, index, names)


# -- file format ------------------------------------------------------------------------

def mdp_from_dict(doc: dict):
    """Build a :class:`TabularMdp` (or :class:`TabularPomdp` when ``obs_model`` is present)."""
    try:
        S, A = int(doc["S"]), int(doc["A"])
        P = np.asarray(doc["transition"], dtype=float).reshape(S, A, S)
        R = np.asarray(doc["reward"], dtype=float).reshape(S, A)
        mdp = TabularMdp(P, R, alpha=float(doc.get("alpha", 1.0)),
                         gamma=doc.get("gamma"), horizon=doc.get("horizon"),
                         initial=doc.get("initial"))
        if "obs_model" in doc:
            O = int(doc["O"])
            return TabularPomdp(mdp, np.asarray(doc["obs_model"], float).reshape(S, O),
                                np.asarray(doc["preference"], float))
        return mdp
    except (KeyError, TypeError) as exc:
        raise MdpError(f"malformed MDP document: {exc}") from exc


def mdp_to_dict(model) -> dict:
    mdp = model.mdp if isinstance(model, TabularPomdp) else model
    doc = {"S": mdp.S, "A": mdp.A, "transition": mdp.transition.tolist(),
           "reward": mdp.reward.tolist(), "alpha": mdp.alpha, "initial": mdp.initial.tolist()}
    if mdp.gamma is not None:
        doc["gamma"] = mdp.gamma
    else:
        doc["horizon"] = mdp.horizon
    if isinstance(model, TabularPomdp):
        doc.update(O=model.O, obs_model=model.obs_model.tolist(), preference=model.preference.tolist())
    return doc


def load_mdp(path):
    with open(path, encoding="utf-8") as fh:
        return mdp_from_dict(json.load(fh))
