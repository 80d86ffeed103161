"""Named oracle-equivalence suites: each fixture is compared against an independent reference."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import oracle
from .rng import make_rng


@dataclass
class CheckRow:
    suite: str
    fixture: str
    metric: str
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.value <= self.tol)

    def line(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        return f"{verdict}  {self.suite:<9} {self.fixture:<28} {self.metric:<16} {self.value:.3e} <= {self.tol:.0e}"


def _tv(hist: Counter, n: int, exact: dict) -> float:
    return 0.5 * sum(abs(hist.get(k, 0) / n - exact.get(k, 0.0)) for k in set(hist) | set(exact))


def data_file(name: str) -> str:
    return str(resources.files("wbpgm") / "data" / name)


# -- suites ----------------------------------------------------------------------------------

def suite_hmm() -> list:
    from .modules.hmm import HmmParams, ffbs_sample, forward_backward, viterbi
    rows = []
    fixtures = {
        "two-state T=3": (HmmParams([0.5, 0.5], [[0.7, 0.3], [0.4, 0.6]], [[0.9, 0.1], [0.2, 0.8]]), [0, 0, 1]),
        "three-state T=5": (HmmParams([0.2, 0.5, 0.3], [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4]],
                                      [[0.7, 0.2, 0.1], [0.1, 0.6, 0.3], [0.2, 0.2, 0.6]]), [0, 2, 1, 1, 0]),
    }
    for name, (hmm, obs) in fixtures.items():
        post = oracle.enumerate_posterior(oracle.hmm_joint(hmm.initial, hmm.transition, hmm.emission, obs))
        marg, ll = forward_backward(hmm, obs)
        err = max(np.abs(marg[t] - post.marginal(t)).max() for t in range(len(obs)))
        rows.append(CheckRow("hmm", name, "marginal max|d|", float(err), 1e-10))
        rows.append(CheckRow("hmm", name, "loglik |d|", abs(ll - post.log_evidence), 1e-10))
        best = post.support[int(np.argmax(post.log_weights))]
        rows.append(CheckRow("hmm", name, "viterbi mismatch", float(tuple(viterbi(hmm, obs)) != tuple(best)), 0.0))
        n = 200_000
        counts = Counter(map(tuple, ffbs_sample(hmm, obs, make_rng(7, f"ffbs-{name}"), size=n).tolist()))
        rows.append(CheckRow("hmm", name, "ffbs TV", _tv(counts, n, post.as_dict()), 0.02))
    return rows


def suite_gmm() -> list:
    from .core.distributions import GaussianParams, NiwParams
    from .modules.gmm import gmm_gibbs_sweep, init_gmm
    data = np.array([[-1.0], [-0.2], [0.4], [1.5]])
    prior = NiwParams(np.zeros(1), 1.0, 3.0, np.eye(1))
    rows = []
    known = (GaussianParams([-0.5], [[1.0]]), GaussianParams([1.0], [[0.5]]))
    for name, kw, joint, n in (
        ("known components N=4", {"known": known},
         oracle.gmm_fixed_joint(data.tolist(), [[-0.5], [1.0]], [[[1.0]], [[0.5]]], 1.0), 100_000),
        ("collapsed NIW N=4", {}, oracle.gmm_niw_joint(data.tolist(), 2, [0.0], 1.0, 3.0, [[1.0]], 1.0), 20_000),
    ):
        rng = make_rng(1, f"gmm-suite-{name}")
        state = init_gmm(data, 2, prior, 1.0, rng, **kw)
        counts = Counter()
        for _ in range(n):
            gmm_gibbs_sweep(state, rng=rng)
            counts[tuple(state.assignments.tolist())] += 1
        rows.append(CheckRow("gmm", name, "gibbs TV", _tv(counts, n, oracle.enumerate_posterior(joint).as_dict()), 0.05))
    return rows


def suite_mlda() -> list:
    from .modules.mlda import init_mlda, mlda_gibbs_sweep
    corpus = [[[0, 0], [1]], [[1, 1], [0]]]
    slot_lik = [[0.9, 0.1], [0.3, 0.7]]
    exact = oracle.enumerate_posterior(oracle.mlda_joint(corpus, 2, [2, 2], 1.0, [0.5, 0.5], slot_lik))
    rng = make_rng(12, "mlda-suite")
    state = init_mlda(corpus, 2, rng, vocab_sizes=[2, 2], alpha=1.0, beta=0.5, slots=True)
    state.slot_messages[:] = np.log(slot_lik)
    n = 50_000
    seen = Counter()
    for _ in range(n):
        mlda_gibbs_sweep(state, rng=rng)
        seen[tuple(np.concatenate([z for obj in state.z for z in obj]).tolist() + state.slots.tolist())] += 1
    return [CheckRow("mlda", "2 objects + slots", "gibbs TV", _tv(seen, n, exact.as_dict()), 0.05)]


def _det_mdp(nxt, rew, alpha, T):
    from .modules.planning import TabularMdp
    S, A = len(nxt), len(nxt[0])
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            P[s, a, nxt[s][a]] = 1.0
    return TabularMdp(P, np.array(rew, float), alpha=alpha, horizon=T)


def suite_planning() -> list:
    from .modules.planning import (TabularMdp, efe_action_values, load_mdp, soft_value_iteration,
                                   trajectory_posterior)
    rows = []
    mdp = _det_mdp([[0, 1], [1, 0]], [[0.0, 1.0], [0.5, -0.3]], 1.0, 3)
    post = trajectory_posterior(mdp, 3)
    sol = soft_value_iteration(mdp)
    err = 0.0
    for t in range(3):
        for s in range(mdp.S):
            cond = post.action_conditional(t, s, mdp.A)
            if cond is not None:
                err = max(err, float(np.abs(sol.policy_steps[t][s] - cond).max()))
    rows.append(CheckRow("planning", "2x2 deterministic T=3", "policy vs post", err, 1e-8))
    P = np.zeros((3, 2, 3))
    for s in range(3):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, min(s + 1, 2)] = 1.0
    R = np.array([[0.0, 0.1], [0.2, 0.3], [1.0, 0.9]])
    _, _, greedy = oracle.hard_value_iteration(P, R, gamma=0.9)
    soft = soft_value_iteration(TabularMdp(P, R, alpha=1e-6, gamma=0.9))
    rows.append(CheckRow("planning", "chain alpha=1e-6", "argmax mismatch",
                         float(soft.policy.argmax(axis=1).tolist() != greedy.tolist()), 0.0))
    for name in ("pomdp_two_state.json", "pomdp_deterministic_obs.json", "pomdp_three_state.json"):
        pomdp = load_mdp(data_file(name))
        S = pomdp.mdp.S
        err = 0.0
        for belief in (np.eye(S)[0], np.full(S, 1.0 / S)):
            res = efe_action_values(pomdp, belief)
            G, risk, amb = oracle.efe_direct_sum(belief.tolist(), pomdp.mdp.transition.tolist(),
                                                 pomdp.obs_model.tolist(), pomdp.preference.tolist())
            err = max(err, float(np.abs(res.g - G).max()), float(np.abs(res.risk - risk).max()),
                      float(np.abs(res.ambiguity - amb).max()))
        rows.append(CheckRow("planning", name.removesuffix(".json"), "efe max|d|", err, 1e-10))
    return rows


def suite_slam() -> list:
    from .modules.slam import GridWorld, init_rbpf, pose_grid, simulate, slam_step
    world = GridWorld.walled(5, 5, start=(2, 2, 0))
    actions = ["forward", "turn_right", "forward", "turn_left"]
    rng = make_rng(7, "mcl")
    _, obs = simulate(world, actions, 0.1, 0.1, rng)
    exact = oracle.exact_grid_filter(world.occupancy.tolist(), actions, obs, 0.1, 0.1)
    state = init_rbpf(world, 10_000, 0.1, 0.1, rng, known_map=True, spread=True)
    worst = 0.0
    for a, o, ref in zip(actions, obs, exact):
        slam_step(state, a, o, rng)
        worst = max(worst, float(0.5 * np.abs(pose_grid(state) - ref).sum()))
    return [CheckRow("slam", "3x3 known map P=1e4", "pose TV (max t)", worst, 0.05)]


def suite_serket() -> list:
    from .checks import FIXTURES, check_fixture
    rows = []
    for name, make in FIXTURES.items():
        res = check_fixture(make(), seed=0)
        rows += [CheckRow("serket", name, "distribution TV", res.distribution_tv, 0.05),
                 CheckRow("serket", name, "sample TV", res.sample_tv, 0.05),
                 CheckRow("serket", name, "joint gibbs TV", res.monolithic_tv, 0.05)]
    return rows


SUITES = {"hmm": suite_hmm, "gmm": suite_gmm, "mlda": suite_mlda, "planning": suite_planning,
          "slam": suite_slam, "serket": suite_serket}


class UnknownSuiteError(KeyError):
    pass


def run_suite(name: str) -> list:
    if name == "all":
        return [row for key in SUITES for row in SUITES[key]()]
    if name not in SUITES:
        raise UnknownSuiteError(f"unknown suite {name!r}; choose from {', '.join(list(SUITES) + ['all'])}")
    return SUITES[name]()


def rows_to_json(rows) -> str:
    return json.dumps([{"suite": r.suite, "fixture": r.fixture, "metric": r.metric, "value": r.value,
                        "tol": r.tol, "pass": r.ok} for r in rows], sort_keys=True, indent=1)
