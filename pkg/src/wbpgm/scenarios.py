"""Seeded synthetic data: object corpora, room worlds with utterances, agent worlds."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .modules.mlda import Corpus
from .modules.slam import HEADINGS, GridWorld, simulate
from .rng import make_rng


# -- object corpora ------------------------------------------------------------------

def synth_object_corpus(seed: int = 0, n_categories: int = 3, per_category: int = 10,
                        feature_vocab: int = 4, tokens_per_modality: int = 12,
                        words_per_object: int = 3, feature_noise: float = 0.0,
                        modalities=("vision", "audio")):
    """Objects whose feature tokens come from category-specific (disjoint) vocabularies.

    Returns ``(corpus, labels, word_of_category)``; the word modality is named
    ``words`` and category ``c`` is always described with word ``c``.
    """
    rng = make_rng(seed, "synth-objects")
    docs, labels, ids = [], [], []
    V = n_categories * feature_vocab
    for c in range(n_categories):
        for j in range(per_category):
            obj = []
            for _ in modalities:
                toks = c * feature_vocab + rng.integers(feature_vocab, size=tokens_per_modality)
                noisy = rng.random(tokens_per_modality) < feature_noise
                toks[noisy] = rng.integers(V, size=int(noisy.sum()))
                obj.append(toks.tolist())
            obj.append([c] * words_per_object)
            docs.append(obj)
            labels.append(c)
            ids.append(f"obj{c}-{j}")
    return Corpus(ids, list(modalities) + ["words"], docs), labels, list(range(n_categories))


# -- navigation helpers ----------------------------------------------------------------

def bfs_path(free: np.ndarray, start, goal) -> list:
    """Shortest 4-connected path of cells from ``start`` to ``goal`` (inclusive)."""
    H, W = free.shape
    prev = {tuple(start): None}
    q = deque([tuple(start)])
    while q:
        cur = q.popleft()
        if cur == tuple(goal):
            break
        for dx, dy in HEADINGS:
            nxt = (cur[0] + dx, cur[1] + dy)
            if 0 <= nxt[0] < W and 0 <= nxt[1] < H and free[nxt[1], nxt[0]] and nxt not in prev:
                prev[nxt] = cur
                q.append(nxt)
    if tuple(goal) not in prev:
        raise ValueError(f"{goal} unreachable from {start}")
    path = [tuple(goal)]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def path_actions(path, heading: int):
    """Turn/forward commands that follow ``path``; returns (actions, final heading)."""
    acts = []
    for (x0, y0), (x1, y1) in zip(path, path[1:]):
        want = [tuple(d) for d in HEADINGS.tolist()].index((x1 - x0, y1 - y0))
        diff = (want - heading) % 4
        acts += {0: [], 1: ["turn_right"], 2: ["turn_right", "turn_right"], 3: ["turn_left"]}[diff]
        acts.append("forward")
        heading = want
    return acts, heading


def tour_actions(world: GridWorld, waypoints) -> list:
    free = ~world.occupancy
    x, y, h = world.start
    acts = []
    for wp in waypoints:
        path = bfs_path(free, (x, y), wp)
        a, h = path_actions(path, h)
        acts += a
        x, y = wp
    return acts


def closed_loop_tour(world: GridWorld, waypoints, eps_move: float, eps_sense: float, rng,
                     max_steps: int = 5000):
    """Drive to each waypoint, replanning from the true pose after every (possibly slipped) step."""
    free = ~world.occupancy
    pose = tuple(world.start)
    actions, poses, obs = [], [], []
    for wp in waypoints:
        while (pose[0], pose[1]) != tuple(wp):
            if len(actions) >= max_steps:
                raise ValueError("tour did not finish")
            a = path_actions(bfs_path(free, pose[:2], wp)[:2], pose[2])[0][0]
            p, o = simulate(world, [a], eps_move, eps_sense, rng, start=pose)
            pose = p[0]
            actions.append(a)
            poses.append(pose)
            obs.append(o[0])
    return actions, poses, obs


# -- room scenarios --------------------------------------------------------------------

THREE_ROOM_ROWS = [
    "##########",
    "#...#....#",
    "#...#....#",
    "#........#",
    "#...#....#",
    "#####.####",
    "#........#",
    "#........#",
    "#........#",
    "##########",
]


def room_map(rows, rooms: dict) -> np.ndarray:
    """Room id per cell from ``{room_id: (x0, y0, x1, y1)}`` inclusive boxes; -1 elsewhere."""
    H, W = len(rows), len(rows[0])
    out = np.full((H, W), -1, dtype=int)
    for rid, (x0, y0, x1, y1) in rooms.items():
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                if rows[y][x] != "#":
                    out[y, x] = int(rid)
    return out


@dataclass
class RoomScenario:
    world: GridWorld
    rooms: np.ndarray  # H x W room id, -1 outside rooms
    vocab: list
    room_words: dict  # room id -> word id
    actions: list
    observations: list
    true_poses: list
    utterances: list  # [{"step": t, "words": [ids]}]
    eps_move: float
    eps_sense: float
    seed: int = 0

    @property
    def n_rooms(self) -> int:
        return int(self.rooms.max()) + 1

    def to_dict(self) -> dict:
        return {"world": self.world.to_dict(), "rooms": self.rooms.tolist(), "vocab": self.vocab,
                "room_words": {str(k): int(v) for k, v in self.room_words.items()},
                "actions": self.actions, "observations": [list(map(int, o)) for o in self.observations],
                "true_poses": [list(map(int, p)) for p in self.true_poses],
                "utterances": self.utterances, "eps_move": self.eps_move,
                "eps_sense": self.eps_sense, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "RoomScenario":
        return cls(GridWorld.from_dict(d["world"]), np.asarray(d["rooms"], dtype=int), list(d["vocab"]),
                   {int(k): int(v) for k, v in d["room_words"].items()}, list(d["actions"]),
                   [tuple(o) for o in d["observations"]], [tuple(p) for p in d.get("true_poses", [])],
                   [dict(u) for u in d["utterances"]], float(d["eps_move"]), float(d["eps_sense"]),
                   int(d.get("seed", 0)))


def load_room_scenario(path) -> RoomScenario:
    with open(path, encoding="utf-8") as fh:
        return RoomScenario.from_dict(json.load(fh))


def make_room_scenario(rows, boxes: dict, room_words: dict, vocab: list, seed: int = 0,
                       n_waypoints: int = 24, eps_move: float = 0.05, eps_sense: float = 0.1,
                       p_teach: float = 0.3, filler_words=(), p_filler: float = 0.5,
                       shared_words: Optional[dict] = None, start=(1, 1, 1)) -> RoomScenario:
    """Tour random waypoints across rooms; a teacher names the current room now and then.

    ``room_words`` maps room -> its word; ``shared_words`` maps a word to the
    rooms it is used in (chosen uniformly when teaching in one of them).
    """
    rng = make_rng(seed, "room-scenario")
    world = GridWorld.from_rows(rows, start=start)
    rooms = room_map(rows, boxes)
    room_ids = sorted(boxes)
    waypoints = []
    for i in range(n_waypoints):
        rid = room_ids[i % len(room_ids)] if i < len(room_ids) else room_ids[int(rng.integers(len(room_ids)))]
        ys, xs = np.nonzero(rooms == rid)
        j = int(rng.integers(len(xs)))
        waypoints.append((int(xs[j]), int(ys[j])))
    actions, poses, obs = closed_loop_tour(world, waypoints, eps_move, eps_sense, rng)
    utterances = []
    options = {r: [room_words[r]] for r in room_words}
    for w, rs in (shared_words or {}).items():
        for r in rs:
            options.setdefault(r, []).append(w)
    for t, (a, (x, y, _h)) in enumerate(zip(actions, poses)):
        rid = rooms[y, x]
        if a != "forward" or rid < 0 or rng.random() >= p_teach:
            continue
        choices = options.get(int(rid), [])
        if not choices:
            continue
        words = [choices[int(rng.integers(len(choices)))]]
        if filler_words and rng.random() < p_filler:
            words.append(filler_words[int(rng.integers(len(filler_words)))])
        utterances.append({"step": t, "words": words})
    return RoomScenario(world, rooms, list(vocab), dict(room_words), actions, obs, poses,
                        utterances, eps_move, eps_sense, seed)


THREE_ROOM_BOXES = {0: (1, 1, 3, 4), 1: (5, 1, 8, 4), 2: (1, 6, 8, 8)}
THREE_ROOM_VOCAB = ["kitchen", "bedroom", "garage", "here", "this"]


def three_room_scenario(seed: int = 7, **kw) -> RoomScenario:
    params = dict(room_words={0: 0, 1: 1, 2: 2}, vocab=THREE_ROOM_VOCAB, filler_words=(3, 4))
    params.update(kw)
    return make_room_scenario(THREE_ROOM_ROWS, THREE_ROOM_BOXES, seed=seed, **params)


# -- agent world ------------------------------------------------------------------------

TWO_ROOM_ROWS = [
    "#######",
    "#..#..#",
    "#.....#",
    "#..#..#",
    "#######",
]
TWO_ROOM_BOXES = {0: (1, 1, 2, 3), 1: (4, 1, 5, 3)}


@dataclass
class AgentWorld:
    """Cell world with 4-way moves, multimodal cell percepts and one rewarded goal cell."""

    occupancy: np.ndarray
    rooms: np.ndarray
    start: tuple
    goal: Optional[tuple]
    vision_tokens: int = 3
    audio_tokens: int = 2
    vision_noise: float = 0.2
    audio_noise: float = 0.1
    max_steps: int = 30
    gamma: float = 0.95
    cells: list = field(default_factory=list)

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        self.rooms = np.asarray(self.rooms, dtype=int)
        H, W = self.occupancy.shape
        self.cells = [(x, y) for y in range(H) for x in range(W) if not self.occupancy[y, x]]
        self.index = {c: i for i, c in enumerate(self.cells)}
        if tuple(self.start) not in self.index or (self.goal is not None and tuple(self.goal) not in self.index):
            raise ValueError("start and goal must be free cells")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def vision_vocab(self) -> int:
        return self.n_cells

    @property
    def audio_vocab(self) -> int:
        return int(self.rooms.max()) + 2  # one token per room plus one for corridors

    MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))

    def step(self, cell, action: int):
        dx, dy = self.MOVES[action]
        nxt = (cell[0] + dx, cell[1] + dy)
        if nxt in self.index:
            return nxt
        return tuple(cell)

    def percept(self, cell, rng) -> list:
        """Vision tokens name the cell (noisily); audio tokens name the room (noisily)."""
        i = self.index[tuple(cell)]
        vis = [i if rng.random() >= self.vision_noise else int(rng.integers(self.vision_vocab))
               for _ in range(self.vision_tokens)]
        room = int(self.rooms[cell[1], cell[0]])
        room = room if room >= 0 else self.audio_vocab - 1
        aud = [room if rng.random() >= self.audio_noise else int(rng.integers(self.audio_vocab))
               for _ in range(self.audio_tokens)]
        return [vis, aud]

    def true_mdp_arrays(self):
        """Deterministic cell transition tensor and entering-the-goal reward."""
        S, A = self.n_cells, 4
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        for s, c in enumerate(self.cells):
            for a in range(A):
                n = self.index[self.step(c, a)]
                P[s, a, n] = 1.0
                if self.goal is not None and self.cells[n] == tuple(self.goal) and s != n:
                    R[s, a] = 1.0
        return P, R

    def to_dict(self) -> dict:
        return {"occupancy": self.occupancy.astype(int).tolist(), "rooms": self.rooms.tolist(),
                "start": list(self.start), "goal": None if self.goal is None else list(self.goal),
                "vision_tokens": self.vision_tokens, "audio_tokens": self.audio_tokens,
                "vision_noise": self.vision_noise, "audio_noise": self.audio_noise,
                "max_steps": self.max_steps, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "AgentWorld":
        return cls(np.asarray(d["occupancy"], bool), np.asarray(d["rooms"], int), tuple(d["start"]),
                   None if d.get("goal") is None else tuple(d["goal"]),
                   int(d.get("vision_tokens", 3)), int(d.get("audio_tokens", 2)),
                   float(d.get("vision_noise", 0.2)), float(d.get("audio_noise", 0.1)),
                   int(d.get("max_steps", 30)), float(d.get("gamma", 0.95)))


def two_room_world(goal=(5, 3), start=(1, 1), **kw) -> AgentWorld:
    occ = np.array([[c == "#" for c in r] for r in TWO_ROOM_ROWS])
    return AgentWorld(occ, room_map(TWO_ROOM_ROWS, TWO_ROOM_BOXES), start, goal, **kw)


def load_agent_world(path) -> AgentWorld:
    with open(path, encoding="utf-8") as fh:
        return AgentWorld.from_dict(json.load(fh))
