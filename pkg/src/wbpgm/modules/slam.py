"""Grid-world SLAM with a Rao-Blackwellized particle filter.

Poses are (x, y, heading) on a walled grid; headings are 0=N, 1=E, 2=S, 3=W.
Actions are ``forward``, ``turn_left`` and ``turn_right``; each fails (has no
effect) with probability ``eps_move`` and ``forward`` into an occupied cell has
no effect.  An observation is four ranges (front, right, back, left), each the
number of free cells before the first occupied one.  A reading is correct with
probability ``1 - eps_sense`` and otherwise uniform over the other values
``0..L`` with ``L = max(width, height) - 1``.

Each particle carries a Beta occupancy posterior per cell.  Ray likelihoods use
the Beta means with out-of-grid cells treated as occupied.  With
``known_map=True`` the true occupancy replaces the particle maps, which turns the
filter into plain Monte Carlo localization.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core.distributions import CategoricalDist

HEADINGS = np.array([(0, -1), (1, 0), (0, 1), (-1, 0)])  # (dx, dy) for N, E, S, W
HEADING_NAMES = ("N", "E", "S", "W")
ACTIONS = ("forward", "turn_left", "turn_right")


class WorldError(ValueError):
    pass


class DegenerateFilterError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GridWorld:
    occupancy: np.ndarray  # H x W bool, indexed [y, x]
    start: tuple = (1, 1, 0)  # (x, y, heading)

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool, copy=True)
        if occ.ndim != 2 or min(occ.shape) < 3:
            raise WorldError("occupancy must be an H x W grid with H, W >= 3")
        if not (occ[0].all() and occ[-1].all() and occ[:, 0].all() and occ[:, -1].all()):
            raise WorldError("border cells must be occupied")
        x, y, h = (int(v) for v in self.start)
        if not (0 <= x < occ.shape[1] and 0 <= y < occ.shape[0]) or occ[y, x]:
            raise WorldError("start cell must be a free cell inside the grid")
        if h not in range(4):
            raise WorldError("heading must be 0..3")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "start", (x, y, h))

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def max_range(self) -> int:
        return max(self.width, self.height) - 1

    @classmethod
    def from_rows(cls, rows, start=None) -> "GridWorld":
        """Build from strings where ``#`` is occupied and anything else is free."""
        occ = np.array([[c == "#" for c in r] for r in rows])
        if start is None:
            ys, xs = np.nonzero(~occ)
            start = (int(xs[0]), int(ys[0]), 0)
        return cls(occ, start)

    @classmethod
    def walled(cls, width: int, height: int, start=(1, 1, 0), interior=()) -> "GridWorld":
        occ = np.zeros((height, width), dtype=bool)
        occ[0] = occ[-1] = True
        occ[:, 0] = occ[:, -1] = True
        for x, y in interior:
            occ[y, x] = True
        return cls(occ, start)

    def free_poses(self) -> list:
        return [(x, y, h) for y in range(self.height) for x in range(self.width) for h in range(4)
                if not self.occupancy[y, x]]

    def to_dict(self) -> dict:
        ys, xs = np.nonzero(self.occupancy)
        x, y, h = self.start
        return {"width": self.width, "height": self.height,
                "occupied": [[int(a), int(b)] for a, b in zip(xs, ys)],
                "start": {"x": x, "y": y, "heading": HEADING_NAMES[h]}}

    @classmethod
    def from_dict(cls, doc: dict) -> "GridWorld":
        try:
            occ = np.zeros((int(doc["height"]), int(doc["width"])), dtype=bool)
            for x, y in doc["occupied"]:
                occ[int(y), int(x)] = True
            st = doc["start"]
            h = st.get("heading", 0)
            h = HEADING_NAMES.index(h) if isinstance(h, str) else int(h)
            return cls(occ, (int(st["x"]), int(st["y"]), h))
        except (KeyError, TypeError, IndexError) as exc:
            raise WorldError(f"malformed world document: {exc}") from exc


def load_world(path) -> GridWorld:
    with open(path, encoding="utf-8") as fh:
        return GridWorld.from_dict(json.load(fh))


def true_ranges(world: GridWorld, x: int, y: int, h: int) -> tuple:
    """Noise-free (front, right, back, left) ranges from pose (x, y, h)."""
    out = []
    for i in range(4):
        dx, dy = HEADINGS[(h + i) % 4]
        n, cx, cy = 0, x + dx, y + dy
        while 0 <= cx < world.width and 0 <= cy < world.height and not world.occupancy[cy, cx]:
            n, cx, cy = n + 1, cx + dx, cy + dy
        out.append(n)
    return tuple(out)


def _apply(world: GridWorld, pose, action: str, blocked=None):
    x, y, h = pose
    if action == "forward":
        nx, ny = x + HEADINGS[h][0], y + HEADINGS[h][1]
        occ = world.occupancy if blocked is None else blocked
        if 0 <= nx < world.width and 0 <= ny < world.height and not occ[ny, nx]:
            return int(nx), int(ny), h
        return x, y, h
    if action == "turn_left":
        return x, y, (h + 3) % 4
    if action == "turn_right":
        return x, y, (h + 1) % 4
    raise ValueError(f"unknown action {action!r}")


def simulate(world: GridWorld, actions, eps_move: float, eps_sense: float, rng, start=None):
    """Roll out ``actions`` in ``world``; returns (true poses, noisy observations)."""
    pose = tuple(world.start if start is None else start)
    L = world.max_range
    poses, observations = [], []
    for a in actions:
        if a not in ACTIONS:
            raise ValueError(f"unknown action {a!r}")
        if rng.random() >= eps_move:
            pose = _apply(world, pose, a)
        reading = []
        for d in true_ranges(world, *pose):
            if rng.random() < eps_sense:
                others = [v for v in range(L + 1) if v != d]
                d = others[int(rng.integers(len(others)))]
            reading.append(d)
        poses.append(pose)
        observations.append(tuple(reading))
    return poses, observations


def exploration_actions(world: GridWorld, n_steps: int, rng, p_forward: float = 0.75, start=None) -> list:
    """Random-walk command sequence planned on the noise-free world."""
    pose = tuple(world.start if start is None else start)
    out = []
    for _ in range(n_steps):
        ahead = _apply(world, pose, "forward")
        if ahead != pose and rng.random() < p_forward:
            a = "forward"
        else:
            a = "turn_left" if rng.random() < 0.5 else "turn_right"
        out.append(a)
        pose = _apply(world, pose, a)
    return out


def dead_reckoning(world: GridWorld, actions, start=None) -> list:
    """Integrate commanded actions assuming every action succeeds in open space."""
    x, y, h = world.start if start is None else start
    out = []
    for a in actions:
        if a == "forward":
            x, y = x + HEADINGS[h][0], y + HEADINGS[h][1]
        elif a == "turn_left":
            h = (h + 3) % 4
        elif a == "turn_right":
            h = (h + 1) % 4
        out.append((int(x), int(y), int(h)))
    return out


@dataclass(eq=False)
class RbpfState:
    world_shape: tuple  # (H, W)
    x: np.ndarray
    y: np.ndarray
    h: np.ndarray
    weights: np.ndarray
    occ_a: Optional[np.ndarray]  # P x H x W Beta "occupied" counts
    occ_b: Optional[np.ndarray]  # P x H x W Beta "free" counts
    eps_move: float
    eps_sense: float
    known: Optional[np.ndarray] = None  # true occupancy for localization-only runs
    prior: tuple = (1.0, 1.0)
    ess_history: list = field(default_factory=list)

    @property
    def P(self) -> int:
        return self.x.size

    @property
    def H(self) -> int:
        return self.world_shape[0]

    @property
    def W(self) -> int:
        return self.world_shape[1]

    @property
    def max_range(self) -> int:
        return max(self.H, self.W) - 1

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    def occupancy_means(self) -> np.ndarray:
        """P x H x W occupancy probabilities used by each particle."""
        if self.known is not None:
            return np.broadcast_to(self.known.astype(float), (self.P,) + self.world_shape)
        return self.occ_a / (self.occ_a + self.occ_b)

    def check(self) -> None:
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        if self.occ_a is not None and (np.any(self.occ_a <= 0) or np.any(self.occ_b <= 0)):
            raise ValueError("Beta parameters must be positive")


BORDER_PRIOR = (999.0, 1.0)


def init_rbpf(world: GridWorld, P: int, eps_move: float, eps_sense: float, rng=None,
              known_map: bool = False, spread: bool = False, prior=(1.0, 1.0),
              border_prior=BORDER_PRIOR) -> RbpfState:
    """Particles at the world's start pose, or spread uniformly over free poses.

    ``spread=True`` draws each particle's pose uniformly from ``rng`` and is
    meant for known-map localization.  Interior cells start at the Beta
    ``prior``; border cells, which every world has occupied, start at
    ``border_prior`` (pass ``None`` to treat them like interior cells).
    """
    if P < 1:
        raise ValueError("need at least one particle")
    if not (0 <= eps_move < 1 and 0 <= eps_sense < 1):
        raise ValueError("noise levels must lie in [0, 1)")
    H, W = world.height, world.width
    if spread:
        poses = np.array(world.free_poses())
        idx = rng.integers(len(poses), size=P)
        x, y, h = poses[idx, 0], poses[idx, 1], poses[idx, 2]
    else:
        x, y, h = (np.full(P, v, dtype=np.int64) for v in world.start)
    if known_map:
        a = b = None
    else:
        a = np.full((H, W), float(prior[0]))
        b = np.full((H, W), float(prior[1]))
        if border_prior is not None:
            edge = np.zeros((H, W), dtype=bool)
            edge[0] = edge[-1] = edge[:, 0] = edge[:, -1] = True
            a[edge], b[edge] = border_prior
        a = np.repeat(a[None], P, axis=0)
        b = np.repeat(b[None], P, axis=0)
    return RbpfState((H, W), x.astype(np.int64), y.astype(np.int64), h.astype(np.int64),
                     np.full(P, 1.0 / P), a, b, float(eps_move), float(eps_sense),
                     known=world.occupancy.copy() if known_map else None, prior=tuple(prior))


def _move(state: RbpfState, action: str, rng) -> None:
    if action not in ACTIONS:
        raise ValueError(f"unknown action {action!r}")
    ok = rng.random(state.P) >= state.eps_move
    if action == "turn_left":
        state.h = np.where(ok, (state.h + 3) % 4, state.h)
    elif action == "turn_right":
        state.h = np.where(ok, (state.h + 1) % 4, state.h)
    else:
        nx = state.x + HEADINGS[state.h, 0]
        ny = state.y + HEADINGS[state.h, 1]
        inside = (nx >= 0) & (nx < state.W) & (ny >= 0) & (ny < state.H)
        cx, cy = np.clip(nx, 0, state.W - 1), np.clip(ny, 0, state.H - 1)
        if state.known is not None:
            free = ~state.known[cy, cx]
        else:
            p = np.arange(state.P)
            free = state.occupancy_means()[p, cy, cx] <= 0.5
        go = ok & inside & free
        state.x = np.where(go, nx, state.x)
        state.y = np.where(go, ny, state.y)


def _ray_cells(state: RbpfState):
    """Cell coordinates along each particle's four rays: arrays P x 4 x (L+1)."""
    k = np.arange(1, state.max_range + 2)
    dirs = (state.h[:, None] + np.arange(4)[None, :]) % 4  # P x 4
    dx, dy = HEADINGS[dirs, 0], HEADINGS[dirs, 1]
    cx = state.x[:, None, None] + dx[:, :, None] * k
    cy = state.y[:, None, None] + dy[:, :, None] * k
    inside = (cx >= 0) & (cx < state.W) & (cy >= 0) & (cy < state.H)
    return np.clip(cx, 0, state.W - 1), np.clip(cy, 0, state.H - 1), inside


def _range_distribution(state: RbpfState) -> np.ndarray:
    """P x 4 x (L+1) probabilities of each true range under each particle's map."""
    cx, cy, inside = _ray_cells(state)
    means = state.occupancy_means()
    p = np.arange(state.P)[:, None, None]
    m = np.where(inside, means[p, cy, cx], 1.0)
    free_before = np.cumprod(np.concatenate([np.ones(m.shape[:2] + (1,)), 1.0 - m[:, :, :-1]], axis=2), axis=2)
    return free_before * m


def observation_likelihood(state: RbpfState, observation) -> np.ndarray:
    obs = np.asarray(observation, dtype=np.int64)
    L = state.max_range
    if obs.shape != (4,) or np.any(obs < 0) or np.any(obs > L):
        raise ValueError(f"observation must be four ranges in [0, {L}]")
    dist = _range_distribution(state)
    hit = dist[:, np.arange(4), obs]  # P x 4
    eps = state.eps_sense
    lik = (1.0 - eps) * hit + (eps / L) * (1.0 - hit)
    return lik.prod(axis=1)


def _update_maps(state: RbpfState, observation) -> None:
    cx, cy, inside = _ray_cells(state)
    obs = np.asarray(observation)
    k = np.arange(cx.shape[2])
    free = (k[None, None, :] < obs[None, :, None]) & inside
    hit = (k[None, None, :] == obs[None, :, None]) & inside
    p = np.broadcast_to(np.arange(state.P)[:, None, None], cx.shape)
    np.add.at(state.occ_b, (p[free], cy[free], cx[free]), 1.0)
    np.add.at(state.occ_a, (p[hit], cy[hit], cx[hit]), 1.0)


def systematic_resample(weights: np.ndarray, rng) -> np.ndarray:
    P = weights.size
    positions = (rng.random() + np.arange(P)) / P
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right").clip(0, P - 1)


def resample(state: RbpfState, rng) -> None:
    idx = systematic_resample(state.weights, rng)
    state.x, state.y, state.h = state.x[idx], state.y[idx], state.h[idx]
    if state.occ_a is not None:
        state.occ_a, state.occ_b = state.occ_a[idx], state.occ_b[idx]
    state.weights = np.full(state.P, 1.0 / state.P)


def slam_step(state: RbpfState, action: str, observation, rng, use_observation: bool = True) -> RbpfState:
    """Move every particle, reweight by the observation, update maps, maybe resample."""
    _move(state, action, rng)
    if use_observation and observation is not None:
        w = state.weights * observation_likelihood(state, observation)
        total = w.sum()
        if not total > 0:
            raise DegenerateFilterError("every particle has zero weight after the observation")
        state.weights = w / total
        if state.occ_a is not None:
            _update_maps(state, observation)
    state.ess_history.append(state.ess())
    if state.ess() < state.P / 2:
        resample(state, rng)
    return state


def map_estimate(state: RbpfState) -> np.ndarray:
    """Weighted average of the particles' occupancy means."""
    return np.einsum("p,pij->ij", state.weights, state.occupancy_means())


def pose_index(W: int, x, y, h):
    return (np.asarray(y) * W + np.asarray(x)) * 4 + np.asarray(h)


def pose_belief(state: RbpfState) -> CategoricalDist:
    """Weighted histogram over poses, indexed ``(y * W + x) * 4 + heading``."""
    n = state.H * state.W * 4
    hist = np.bincount(pose_index(state.W, state.x, state.y, state.h), weights=state.weights, minlength=n)
    return CategoricalDist.from_weights(hist)


def pose_grid(state: RbpfState) -> np.ndarray:
    """Pose belief reshaped to H x W x 4."""
    return pose_belief(state).probs.reshape(state.H, state.W, 4)


def pose_estimate(state: RbpfState) -> tuple:
    """Most probable pose as (x, y, heading)."""
    k = int(np.argmax(pose_belief(state).probs))
    return (k // 4) % state.W, (k // 4) // state.W, k % 4


def mean_position(state: RbpfState) -> np.ndarray:
    """Weighted mean cell-centre position (x, y)."""
    return np.array([state.weights @ state.x, state.weights @ state.y], dtype=float)


def run_filter(world: GridWorld, actions, observations, P: int, eps_move: float, eps_sense: float,
               rng, known_map: bool = False, use_observations: bool = True, **init_kw):
    """Filter a recorded run; returns (state, per-step pose estimates)."""
    state = init_rbpf(world, P, eps_move, eps_sense, rng, known_map=known_map, **init_kw)
    estimates = []
    for a, o in zip(actions, observations):
        slam_step(state, a, o, rng, use_observation=use_observations)
        estimates.append(pose_estimate(state))
    return state, estimates


def write_trajectory(path, actions, observations, estimates) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, o, e in zip(actions, observations, estimates):
            rec = {"action": a, "observation": list(map(int, o)),
                   "estimate": {"x": int(e[0]), "y": int(e[1]), "heading": HEADING_NAMES[int(e[2])]}}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trajectory(path) -> tuple:
    actions, observations, estimates = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            actions.append(rec["action"])
            observations.append(tuple(rec["observation"]) if rec.get("observation") is not None else None)
            est = rec.get("estimate")
            if est is not None:
                h = est.get("heading", 0)
                estimates.append((est["x"], est["y"], HEADING_NAMES.index(h) if isinstance(h, str) else h))
    return actions, observations, estimates
