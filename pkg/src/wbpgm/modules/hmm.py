"""Categorical-emission hidden Markov models.

Inference runs in log space with per-step log-sum-exp normalization, so
sequences of 10^4 steps and more are fine.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from ..core.distributions import CategoricalDist
from ..rng import draw_categorical
from ..serket import ExchangeMode, ItemCategoricalEndpoint

ROW_TOL = 1e-9


def _stochastic(name, m, ndim):
    a = np.array(m, dtype=float, copy=True)
    if a.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimension(s)")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} entries must be finite and >= 0")
    if np.any(np.abs(a.sum(axis=-1) - 1.0) > ROW_TOL):
        raise ValueError(f"{name} rows must sum to 1")
    a.setflags(write=False)
    return a


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


@dataclass(frozen=True, eq=False)
class HmmParams:
    initial: np.ndarray
    transition: np.ndarray
    emission: np.ndarray

    def __post_init__(self):
        init = self.initial.probs if isinstance(self.initial, CategoricalDist) else self.initial
        object.__setattr__(self, "initial", _stochastic("initial", init, 1))
        object.__setattr__(self, "transition", _stochastic("transition", self.transition, 2))
        object.__setattr__(self, "emission", _stochastic("emission", self.emission, 2))
        K = self.initial.size
        if self.transition.shape != (K, K) or self.emission.shape[0] != K:
            raise ValueError("initial/transition/emission shapes disagree")

    @property
    def K(self) -> int:
        return self.initial.size

    @property
    def V(self) -> int:
        return self.emission.shape[1]

    def to_dict(self) -> dict:
        return {"initial": self.initial.tolist(), "transition": self.transition.tolist(),
                "emission": self.emission.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "HmmParams":
        return cls(d["initial"], d["transition"], d["emission"])


class SymbolError(ValueError):
    pass


def _check_obs(hmm: HmmParams, obs) -> np.ndarray:
    o = np.asarray(obs)
    if o.ndim != 1 or o.size < 1:
        raise SymbolError("observation sequence must be a non-empty 1-D sequence")
    if not np.issubdtype(o.dtype, np.integer):
        if not np.all(o == np.round(o)):
            raise SymbolError("observations must be integer symbols")
        o = o.astype(int)
    if o.min() < 0 or o.max() >= hmm.V:
        raise SymbolError(f"symbol out of range [0, {hmm.V})")
    return o


def _log_lik(hmm, obs, evidence):
    obs = _check_obs(hmm, obs)
    ll = _log(hmm.emission)[:, obs].T  # T x K
    if evidence is not None:
        ev = np.asarray(evidence, dtype=float)
        if ev.shape != ll.shape:
            raise ValueError(f"evidence must be T x K = {ll.shape}")
        ll = ll + ev
    return ll


def _scaled(log_lik):
    """Per-step shifted likelihoods: ``lik[t] = exp(log_lik[t] - shift[t])``."""
    shift = log_lik.max(axis=1)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    return np.exp(log_lik - shift[:, None]), shift


def _forward(pi, A, lik):
    """Normalized forward pass.  Returns ``alpha`` (T x K) and step normalizers ``c``."""
    T, K = lik.shape
    alpha = np.empty((T, K))
    c = np.empty(T)
    a = pi * lik[0]
    c[0] = a.sum()
    alpha[0] = a / c[0] if c[0] > 0 else a
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * lik[t]
        c[t] = a.sum()
        alpha[t] = a / c[t] if c[t] > 0 else a
    return alpha, c


def _backward(A, lik, c):
    T, K = lik.shape
    beta = np.ones((T, K))
    for t in range(T - 2, -1, -1):
        beta[t] = (A @ (lik[t + 1] * beta[t + 1])) / c[t + 1]
    return beta


def _run_forward(hmm, obs, evidence):
    log_lik = _log_lik(hmm, obs, evidence)
    lik, shift = _scaled(log_lik)
    alpha, c = _forward(hmm.initial, hmm.transition, lik)
    with np.errstate(divide="ignore"):
        log_c = np.log(c) + shift
    return lik, alpha, c, log_c


def forward_filter(hmm: HmmParams, obs, evidence=None) -> np.ndarray:
    """Filtered state marginals p(z_t | x_1:t) as a T x K array."""
    return _run_forward(hmm, obs, evidence)[1]


def forward_backward(hmm: HmmParams, obs, evidence=None):
    """Smoothed marginals (T x K) and the sequence log-likelihood.

    ``evidence`` optionally adds a T x K array of log-factors (soft evidence or
    incoming messages) to the emission terms.
    """
    lik, alpha, c, log_c = _run_forward(hmm, obs, evidence)
    if not np.all(np.isfinite(log_c)):
        raise ValueError("observation sequence has zero probability under the model")
    beta = _backward(hmm.transition, lik, c)
    g = alpha * beta
    return g / g.sum(axis=1, keepdims=True), float(log_c.sum())


def viterbi(hmm: HmmParams, obs, evidence=None) -> np.ndarray:
    log_lik = _log_lik(hmm, obs, evidence)
    log_A = _log(hmm.transition)
    T, K = log_lik.shape
    delta = _log(hmm.initial) + log_lik[0]
    back = np.zeros((T, K), dtype=int)
    cols = np.arange(K)
    for t in range(1, T):
        scores = delta[:, None] + log_A
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], cols] + log_lik[t]
    path = np.empty(T, dtype=int)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def path_log_prob(hmm: HmmParams, obs, path) -> float:
    obs = _check_obs(hmm, obs)
    lp = _log(hmm.initial)[path[0]] + _log(hmm.emission)[path[0], obs[0]]
    for t in range(1, len(obs)):
        lp += _log(hmm.transition)[path[t - 1], path[t]] + _log(hmm.emission)[path[t], obs[t]]
    return float(lp)


def _draw_rows(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One inverse-CDF draw per row of a non-negative weight matrix."""
    cdf = np.cumsum(weights, axis=1)
    u = rng.random(weights.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, weights.shape[1] - 1)


def ffbs_sample(hmm: HmmParams, obs, rng: np.random.Generator, evidence=None, size=None):
    """Draw state paths from p(z_1:T | x_1:T) by forward filtering, backward sampling.

    Returns one path of length T, or a ``size x T`` array when ``size`` is given.
    """
    lik, alpha, c, log_c = _run_forward(hmm, obs, evidence)
    if not np.all(np.isfinite(log_c)):
        raise ValueError("observation sequence has zero probability under the model")
    T = lik.shape[0]
    n = 1 if size is None else int(size)
    paths = np.empty((n, T), dtype=int)
    paths[:, -1] = _draw_rows(np.broadcast_to(alpha[-1], (n, hmm.K)), rng)
    for t in range(T - 2, -1, -1):
        w = alpha[t][None, :] * hmm.transition[:, paths[:, t + 1]].T
        paths[:, t] = _draw_rows(w, rng)
    return paths[0] if size is None else paths


@dataclass
class BaumWelchResult:
    hmm: HmmParams
    trace: list  # total log-likelihood before each update, then after the last one
    iterations: int
    converged: bool
    # trace plus the log Dirichlet prior of the learned parameters; the quantity
    # each update cannot decrease (equals ``trace`` when pseudo_count is 0)
    objective: list = field(default_factory=list)


def _log_prior(hmm: HmmParams, pseudo_count: float, learn) -> float:
    if pseudo_count <= 0:
        return 0.0
    parts = (hmm.initial, hmm.transition, hmm.emission)
    with np.errstate(divide="ignore"):
        return float(pseudo_count * sum(np.log(p).sum() for p, on in zip(parts, learn) if on))


def baum_welch(hmm0: HmmParams, obs_set: Sequence, max_iters: int = 100, tol: float = 1e-6,
               learn_initial: bool = True, learn_transition: bool = True,
               learn_emission: bool = True, pseudo_count: float = 0.0) -> BaumWelchResult:
    """EM for HMM parameters over a set of sequences.

    Stops once the increase in log-likelihood per observed symbol is below
    ``tol`` or after ``max_iters`` updates.  States with no expected visits
    keep their previous rows.  A positive ``pseudo_count`` adds that many
    fictitious counts to every expected count (a MAP update under symmetric
    Dirichlet priors), which keeps every probability strictly positive; the
    likelihood is then no longer guaranteed to increase monotonically, but
    ``objective`` (likelihood plus log prior) is.
    """
    learn = (learn_initial, learn_transition, learn_emission)
    seqs = [_check_obs(hmm0, o) for o in obs_set]
    if not seqs:
        raise ValueError("baum_welch needs at least one observation sequence")
    n_symbols = sum(len(s) for s in seqs)
    hmm = hmm0
    trace = []
    objective = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        K, V = hmm.K, hmm.V
        A = hmm.transition
        pi_acc = np.zeros(K)
        xi_acc = np.zeros((K, K))
        em_acc = np.zeros((K, V))
        total_ll = 0.0
        for obs in seqs:
            lik, shift = _scaled(_log(hmm.emission)[:, obs].T)
            alpha, c = _forward(hmm.initial, A, lik)
            beta = _backward(A, lik, c)
            with np.errstate(divide="ignore"):
                total_ll += float((np.log(c) + shift).sum())
            gamma = alpha * beta
            gamma /= gamma.sum(axis=1, keepdims=True)
            pi_acc += gamma[0]
            if len(obs) > 1:
                right = lik[1:] * beta[1:] / c[1:, None]
                xi_acc += A * (alpha[:-1].T @ right)
            np.add.at(em_acc.T, obs, gamma)
        trace.append(float(total_ll))
        objective.append(trace[-1] + _log_prior(hmm, pseudo_count, learn))
        if len(trace) > 1 and (trace[-1] - trace[-2]) / n_symbols < tol:
            converged = True
            break
        if pseudo_count > 0:
            pi_acc += pseudo_count
            xi_acc += pseudo_count
            em_acc += pseudo_count
        init = pi_acc / pi_acc.sum() if learn_initial else hmm.initial
        A = np.array(hmm.transition)
        if learn_transition:
            rows = xi_acc.sum(axis=1)
            ok = rows > 0
            A[ok] = xi_acc[ok] / rows[ok, None]
        B = np.array(hmm.emission)
        if learn_emission:
            rows = em_acc.sum(axis=1)
            ok = rows > 0
            B[ok] = em_acc[ok] / rows[ok, None]
        hmm = HmmParams(init, A, B)
    else:
        # score the final parameters so the trace ends on the returned model
        trace.append(sum(forward_backward(hmm, o)[1] for o in seqs))
        objective.append(trace[-1] + _log_prior(hmm, pseudo_count, learn))
        if (trace[-1] - trace[-2]) / n_symbols < tol:
            converged = True
    return BaumWelchResult(hmm, trace, len(trace) - 1, converged, objective)


def sample_hmm(hmm: HmmParams, T: int, rng: np.random.Generator):
    """Generate ``(states, observations)`` of length ``T``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    z = np.empty(T, dtype=int)
    x = np.empty(T, dtype=int)
    z[0] = draw_categorical(hmm.initial, rng)
    x[0] = draw_categorical(hmm.emission[z[0]], rng)
    for t in range(1, T):
        z[t] = draw_categorical(hmm.transition[z[t - 1]], rng)
        x[t] = draw_categorical(hmm.emission[z[t]], rng)
    return z, x


def read_sequences(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                if "obs" not in rec and "meta" in rec:
                    continue  # header record
                out.append((rec.get("id"), list(rec["obs"])))
    return out


def write_sequences(path, records: Iterable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid, obs in records:
            fh.write(json.dumps({"id": rid, "obs": [int(o) for o in obs]}) + "\n")


class HmmEndpoint(ItemCategoricalEndpoint):
    """Exposes the hidden state at each step of one sequence as ``prefix[t]``.

    Distribution mode runs forward-backward with installed messages as soft
    evidence, so the emitted factors are exact.  Sample mode holds pinned
    steps fixed and redraws the rest with forward-filter backward-sample.
    """

    rao_blackwell = False

    def __init__(self, id: str, hmm: HmmParams, obs, prefix: str = "x", path=None):
        o = _check_obs(hmm, obs)
        super().__init__(id, prefix, o.size, hmm.K)
        self.hmm = hmm
        self.obs = o
        self.path = np.zeros(o.size, dtype=np.int64) if path is None else np.asarray(path, np.int64).copy()
        self._log_pi = _log(hmm.initial)
        self._log_A = _log(hmm.transition)
        self._log_B = _log(hmm.emission)

    def _log_conditional(self, t):
        lw = self._log_B[:, self.obs[t]].copy()
        lw += self._log_pi if t == 0 else self._log_A[self.path[t - 1]]
        if t + 1 < self.n_items:
            lw += self._log_A[:, self.path[t + 1]]
        if not np.isfinite(lw).any():
            raise ValueError(f"state at step {t} has no support given its neighbours")
        return lw - np.logaddexp.reduce(lw)

    def _set_latent(self, t, k):
        self.path[t] = k

    def _evidence(self):
        ev = self.msg.copy()
        pinned = self.pinned >= 0
        if pinned.any():
            hard = np.full((pinned.sum(), self.K), -np.inf)
            hard[np.arange(pinned.sum()), self.pinned[pinned]] = 0.0
            ev[pinned] = hard
        return ev

    def _sweep(self, rng):
        ev = self._evidence()
        self.path = ffbs_sample(self.hmm, self.obs, rng, evidence=ev)
        if self.exchange_mode == ExchangeMode.SAMPLE:
            return None
        return forward_backward(self.hmm, self.obs, evidence=self.msg)[0]
