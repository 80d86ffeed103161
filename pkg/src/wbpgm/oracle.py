"""Brute-force reference computations used to check the inference modules.

Everything here is deliberately naive: explicit loops over configurations,
no dynamic programming, and no imports from the inference modules.  Only the
core value types are shared.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp, multigammaln

MAX_CONFIGS = 10 ** 6


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteJoint:
    """An unnormalized joint over discrete variables with ``domains[i]`` values each."""

    domains: tuple
    log_prob: Callable
    names: tuple = ()

    @property
    def n_configs(self) -> int:
        return int(np.prod([int(d) for d in self.domains], dtype=object))


@dataclass
class EnumerablePosterior:
    support: list
    log_weights: np.ndarray
    domains: tuple = ()

    @property
    def probs(self) -> np.ndarray:
        lw = self.log_weights
        return np.exp(lw - logsumexp(lw))

    @property
    def log_evidence(self) -> float:
        return float(logsumexp(self.log_weights))

    def marginal(self, i: int) -> np.ndarray:
        out = np.zeros(self.domains[i])
        for cfg, p in zip(self.support, self.probs):
            out[cfg[i]] += p
        return out

    def marginals(self) -> list:
        return [self.marginal(i) for i in range(len(self.domains))]

    def as_dict(self) -> dict:
        return {cfg: p for cfg, p in zip(self.support, self.probs)}


def enumerate_posterior(joint: DiscreteJoint, max_configs: int = MAX_CONFIGS) -> EnumerablePosterior:
    """Exact normalized posterior by direct summation over every configuration."""
    if joint.n_configs > max_configs:
        raise OracleSizeError(f"{joint.n_configs} configurations exceed the limit {max_configs}")
    support = []
    lw = []
    for cfg in itertools.product(*[range(d) for d in joint.domains]):
        support.append(cfg)
        lw.append(joint.log_prob(cfg))
    lw = np.array(lw, dtype=float)
    if not np.isfinite(logsumexp(lw)):
        raise ValueError("joint has zero total mass")
    return EnumerablePosterior(support, lw, tuple(joint.domains))


@dataclass
class EmpiricalPosterior:
    counts: dict = field(default_factory=dict)
    domains: tuple = ()
    n: int = 0

    def freq(self, cfg) -> float:
        return self.counts.get(tuple(cfg), 0) / self.n

    def marginal(self, i: int) -> np.ndarray:
        out = np.zeros(self.domains[i])
        for cfg, c in self.counts.items():
            out[cfg[i]] += c
        return out / self.n

    def tv_to(self, exact: EnumerablePosterior) -> float:
        ref = exact.as_dict()
        keys = set(ref) | set(self.counts)
        return 0.5 * sum(abs(ref.get(k, 0.0) - self.freq(k)) for k in keys)


def joint_gibbs(joint: DiscreteJoint, sweeps: int, rng: np.random.Generator,
                init: Optional[Sequence[int]] = None, burn_in: int = 100) -> EmpiricalPosterior:
    """Single-site Gibbs over the whole joint; returns the empirical histogram."""
    if init is None:
        init = next(cfg for cfg in itertools.product(*[range(d) for d in joint.domains])
                    if np.isfinite(joint.log_prob(cfg)))
    state = list(init)
    hist = EmpiricalPosterior(domains=tuple(joint.domains))
    for sweep in range(burn_in + sweeps):
        for i, d in enumerate(joint.domains):
            lw = []
            for v in range(d):
                state[i] = v
                lw.append(joint.log_prob(tuple(state)))
            lw = np.array(lw)
            w = np.exp(lw - lw.max())
            u = rng.random() * w.sum()
            acc = 0.0
            pick = d - 1
            for v in range(d):
                acc += w[v]
                if u < acc:
                    pick = v
                    break
            state[i] = pick
        if sweep >= burn_in:
            key = tuple(state)
            hist.counts[key] = hist.counts.get(key, 0) + 1
            hist.n += 1
    return hist


# -- model builders --------------------------------------------------------------

def _log(x):
    return math.log(x) if x > 0 else -math.inf


def hmm_joint(initial, transition, emission, obs, extra_lik=None) -> DiscreteJoint:
    """Joint over state paths; ``extra_lik[t][k]`` multiplies in extra evidence."""
    T, K = len(obs), len(initial)

    def log_prob(path):
        lp = _log(initial[path[0]]) + _log(emission[path[0]][obs[0]])
        for t in range(1, T):
            lp += _log(transition[path[t - 1]][path[t]]) + _log(emission[path[t]][obs[t]])
        if extra_lik is not None:
            for t in range(T):
                lp += _log(extra_lik[t][path[t]])
        return lp

    return DiscreteJoint(tuple([K] * T), log_prob)


def _dirmult_log(counts, alpha):
    counts = list(counts)
    K = len(counts)
    n = sum(counts)
    out = gammaln(K * alpha) - gammaln(n + K * alpha)
    for c in counts:
        out += gammaln(c + alpha) - gammaln(alpha)
    return out


def _gauss_log(x, mean, cov):
    x = np.atleast_1d(np.asarray(x, float))
    mean = np.atleast_1d(np.asarray(mean, float))
    cov = np.atleast_2d(np.asarray(cov, float))
    D = x.size
    diff = x - mean
    sign, logdet = np.linalg.slogdet(cov)
    return float(-0.5 * (D * math.log(2 * math.pi) + logdet + diff @ np.linalg.inv(cov) @ diff))


def gmm_fixed_joint(data, means, covs, weight_alpha: float, label_lik=None) -> DiscreteJoint:
    """Assignments of a GMM with known components and collapsed Dirichlet weights."""
    N, K = len(data), len(means)
    table = [[_gauss_log(data[i], means[k], covs[k]) for k in range(K)] for i in range(N)]

    def log_prob(z):
        counts = [0] * K
        lp = 0.0
        for i, k in enumerate(z):
            counts[k] += 1
            lp += table[i][k]
            if label_lik is not None:
                lp += _log(label_lik[i][k])
        return lp + _dirmult_log(counts, weight_alpha)

    return DiscreteJoint(tuple([K] * N), log_prob)


def niw_log_evidence(points, mean0, kappa0, dof0, scale0) -> float:
    """Closed-form marginal likelihood of points under a Normal-inverse-Wishart prior."""
    X = np.atleast_2d(np.asarray(points, float))
    mean0 = np.atleast_1d(np.asarray(mean0, float))
    scale0 = np.atleast_2d(np.asarray(scale0, float))
    D = mean0.size
    if X.size == 0:
        return 0.0
    if X.shape[1] != D:
        X = X.reshape(-1, D)
    n = X.shape[0]
    xbar = X.mean(axis=0)
    centered = (X - xbar).T @ (X - xbar)
    kn = kappa0 + n
    vn = dof0 + n
    sn = scale0 + centered + (kappa0 * n / kn) * np.outer(xbar - mean0, xbar - mean0)
    return float(-0.5 * n * D * math.log(math.pi)
                 + multigammaln(vn / 2.0, D) - multigammaln(dof0 / 2.0, D)
                 + 0.5 * dof0 * np.linalg.slogdet(scale0)[1] - 0.5 * vn * np.linalg.slogdet(sn)[1]
                 + 0.5 * D * (math.log(kappa0) - math.log(kn)))


def gmm_niw_joint(data, K: int, mean0, kappa0, dof0, scale0, weight_alpha: float,
                  label_lik=None) -> DiscreteJoint:
    """Assignments of a GMM with NIW-collapsed components and collapsed weights."""
    X = np.asarray(data, float)
    if X.ndim == 1:
        X = X[:, None]
    N = X.shape[0]

    def log_prob(z):
        lp = 0.0
        counts = [0] * K
        for k in range(K):
            members = [i for i in range(N) if z[i] == k]
            counts[k] = len(members)
            if members:
                lp += niw_log_evidence(X[members], mean0, kappa0, dof0, scale0)
        if label_lik is not None:
            for i in range(N):
                lp += _log(label_lik[i][z[i]])
        return lp + _dirmult_log(counts, weight_alpha)

    return DiscreteJoint(tuple([K] * N), log_prob)


def mlda_joint(corpus, K: int, vocab_sizes, alpha: float, betas, slot_lik=None) -> DiscreteJoint:
    """Collapsed MLDA joint over every token topic (plus optional per-object slot topics).

    ``corpus[o][m]`` is the token list of object ``o`` in modality ``m``.
    Variables are ordered object by object, modality by modality, token by
    token; slot variables (one per object) follow all token variables.
    """
    tokens = []  # (object, modality, word)
    for o, obj in enumerate(corpus):
        for m, words in enumerate(obj):
            for w in words:
                tokens.append((o, m, w))
    n_obj = len(corpus)
    M = len(vocab_sizes)
    n_tok = len(tokens)
    n_slot = n_obj if slot_lik is not None else 0

    def log_prob(z):
        doc = [[0] * K for _ in range(n_obj)]
        tw = [[[0] * vocab_sizes[m] for _ in range(K)] for m in range(M)]
        for (o, m, w), k in zip(tokens, z[:n_tok]):
            doc[o][k] += 1
            tw[m][k][w] += 1
        lp = 0.0
        for o in range(n_slot):
            k = z[n_tok + o]
            doc[o][k] += 1
            lp += _log(slot_lik[o][k])
        for o in range(n_obj):
            lp += _dirmult_log(doc[o], alpha)
        for m in range(M):
            for k in range(K):
                lp += _dirmult_log(tw[m][k], betas[m])
        return lp

    return DiscreteJoint(tuple([K] * (n_tok + n_slot)), log_prob)


def mdp_trajectory_joint(initial, transition, reward, T: int, alpha: float) -> DiscreteJoint:
    """Trajectories (s1, a1, ..., sT, aT) weighted by prior dynamics times optimality.

    Actions have a uniform prior; p(O_t = 1 | s, a) = exp((r(s, a) - r_max) / alpha).
    """
    S = len(initial)
    A = len(reward[0])
    r_max = max(max(row) for row in reward)

    def log_prob(cfg):
        lp = 0.0
        for t in range(T):
            s, a = cfg[2 * t], cfg[2 * t + 1]
            if t == 0:
                lp += _log(initial[s])
            else:
                lp += _log(transition[cfg[2 * t - 2]][cfg[2 * t - 1]][s])
            lp += -math.log(A) + (reward[s][a] - r_max) / alpha
        return lp

    return DiscreteJoint(tuple([S, A] * T), log_prob)


def independent_joint(marginals) -> DiscreteJoint:
    def log_prob(cfg):
        return sum(_log(marginals[i][v]) for i, v in enumerate(cfg))
    return DiscreteJoint(tuple(len(m) for m in marginals), log_prob)


# -- planning oracles --------------------------------------------------------------

def hard_value_iteration(transition, reward, gamma: Optional[float] = None,
                         horizon: Optional[int] = None, tol: float = 1e-12, max_iters: int = 1_000_000):
    """Bellman max-backup.  Returns ``(Q, V, greedy_policy)`` for the first step."""
    P = np.asarray(transition, float)
    R = np.asarray(reward, float)
    S, A = R.shape
    if horizon is not None:
        V = np.zeros(S)
        Q = R.copy()
        for _ in range(horizon):
            Q = np.empty((S, A))
            for s in range(S):
                for a in range(A):
                    Q[s, a] = R[s, a] + sum(P[s, a, s2] * V[s2] for s2 in range(S))
            V = Q.max(axis=1)
        return Q, V, Q.argmax(axis=1)
    g = 0.0 if gamma is None else float(gamma)
    V = np.zeros(S)
    for _ in range(max_iters):
        Q = R + g * np.einsum("sat,t->sa", P, V)
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            break
        V = V_new
    Q = R + g * np.einsum("sat,t->sa", P, V)
    return Q, Q.max(axis=1), Q.argmax(axis=1)


def efe_direct_sum(belief, transition, obs_model, preference):
    """Term-by-term expected free energy per action: ``(G, risk, ambiguity)``."""
    S = len(belief)
    A = len(transition[0])
    O = len(obs_model[0])
    G, risk, amb = [], [], []
    for a in range(A):
        qs = [0.0] * S
        for s in range(S):
            for s2 in range(S):
                qs[s2] += belief[s] * transition[s][a][s2]
        qo = [0.0] * O
        for s2 in range(S):
            for o in range(O):
                qo[o] += qs[s2] * obs_model[s2][o]
        r = 0.0
        for o in range(O):
            if qo[o] > 0:
                if preference[o] <= 0:
                    r = math.inf
                    break
                r += qo[o] * (math.log(qo[o]) - math.log(preference[o]))
        h = 0.0
        for s2 in range(S):
            ent = 0.0
            for o in range(O):
                p = obs_model[s2][o]
                if p > 0:
                    ent -= p * math.log(p)
            h += qs[s2] * ent
        risk.append(r)
        amb.append(h)
        G.append(r + h)
    return G, risk, amb


# -- localization oracle ---------------------------------------------------------

HEADINGS = [(0, -1), (1, 0), (0, 1), (-1, 0)]  # N, E, S, W as (dx, dy)


def _ray_length(occ, x, y, h):
    H, W = len(occ), len(occ[0])
    dx, dy = HEADINGS[h]
    n = 0
    cx, cy = x + dx, y + dy
    while 0 <= cx < W and 0 <= cy < H and not occ[cy][cx]:
        n += 1
        cx += dx
        cy += dy
    return n


def exact_grid_filter(occupancy, actions, observations, eps_move: float, eps_sense: float,
                      initial=None, max_poses: int = 10 ** 4):
    """Exact Bayes filter over (x, y, heading) poses on a known map.

    Motion: with probability ``eps_move`` an action has no effect; ``forward``
    into an occupied cell also has no effect.  Sensing: four ranges (front,
    right, back, left), each independently correct with probability
    ``1 - eps_sense`` and otherwise uniform over the other admissible values.
    Returns one ``H x W x 4`` posterior array per step.
    """
    occ = [[bool(v) for v in row] for row in occupancy]
    H, W = len(occ), len(occ[0])
    if H * W * 4 > max_poses:
        raise OracleSizeError("pose space too large for the exact filter")
    L = max(W, H) - 1
    poses = [(x, y, h) for y in range(H) for x in range(W) for h in range(4) if not occ[y][x]]
    if initial is None:
        bel = {p: 1.0 / len(poses) for p in poses}
    else:
        bel = {p: float(initial[p[1]][p[0]][p[2]]) for p in poses}
    out = []
    for action, obs in zip(actions, observations):
        pred = {p: 0.0 for p in poses}
        for (x, y, h), w in bel.items():
            if w == 0:
                continue
            if action == "forward":
                nx, ny = x + HEADINGS[h][0], y + HEADINGS[h][1]
                if 0 <= nx < W and 0 <= ny < H and not occ[ny][nx]:
                    moved = (nx, ny, h)
                else:
                    moved = (x, y, h)
            elif action == "turn_left":
                moved = (x, y, (h + 3) % 4)
            elif action == "turn_right":
                moved = (x, y, (h + 1) % 4)
            else:
                moved = (x, y, h)
            pred[moved] += (1 - eps_move) * w
            pred[(x, y, h)] += eps_move * w
        post = {}
        for (x, y, h), w in pred.items():
            like = 1.0
            if obs is not None:
                for i in range(4):
                    d = _ray_length(occ, x, y, (h + i) % 4)
                    like *= (1 - eps_sense) if obs[i] == d else eps_sense / L
            post[(x, y, h)] = w * like
        z = sum(post.values())
        if z <= 0:
            raise ValueError("observations have zero probability under the known map")
        bel = {p: v / z for p, v in post.items()}
        arr = np.zeros((H, W, 4))
        for (x, y, h), v in bel.items():
            arr[y, x, h] = v
        out.append(arr)
    return out


def propagate_motion(occupancy, actions, eps_move: float, initial):
    """Motion-only propagation (no sensing) of an ``H x W x 4`` pose distribution."""
    return exact_grid_filter(occupancy, actions, [None] * len(actions), eps_move, 0.0, initial)


# -- reduction oracle for the multimodal topic model ------------------------------

def plain_lda_gibbs(docs, K: int, V: int, alpha: float, beta: float, sweeps: int, rng):
    """Textbook collapsed-Gibbs LDA with uniform random initialization.

    Draw order: one ``rng.integers(K)`` per token at initialization, then one
    ``rng.random()`` per token per sweep, documents and tokens in order.
    Returns ``(z, doc_topic, topic_word)``.
    """
    z = []
    ndk = [[0] * K for _ in docs]
    nkw = [[0] * V for _ in range(K)]
    nk = [0] * K
    for d, doc in enumerate(docs):
        zd = []
        for w in doc:
            k = int(rng.integers(K))
            zd.append(k)
            ndk[d][k] += 1
            nkw[k][w] += 1
            nk[k] += 1
        z.append(zd)
    for _ in range(sweeps):
        for d, doc in enumerate(docs):
            for i, w in enumerate(doc):
                k = z[d][i]
                ndk[d][k] -= 1
                nkw[k][w] -= 1
                nk[k] -= 1
                weights = [(ndk[d][j] + alpha) * ((nkw[j][w] + beta) / (nk[j] + V * beta))
                           for j in range(K)]
                total = 0.0
                for wt in weights:
                    total += wt
                u = rng.random() * total
                acc = 0.0
                new = K - 1
                for j in range(K):
                    acc += weights[j]
                    if u < acc:
                        new = j
                        break
                z[d][i] = new
                ndk[d][new] += 1
                nkw[new][w] += 1
                nk[new] += 1
    return z, np.array(ndk), np.array(nkw)
