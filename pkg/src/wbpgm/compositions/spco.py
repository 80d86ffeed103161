"""Place categories from a mapped trajectory with spoken room names, and word-driven navigation.

Pipeline: the SLAM filter turns the recorded run into pose estimates; the
poses at which words were heard feed a Gaussian mixture over positions (the
place index); a link module ties each place index to a category; a word
module explains the heard words from the category.  The three meet on the
bus and are sampled in sample-exchange rounds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.cluster.vq import kmeans2

from ..core.distributions import NiwParams
from ..modules.category import CategoryObservationEndpoint
from ..modules.gmm import GmmEndpoint, GmmState, gmm_log_joint, init_gmm
from ..modules.planning import grid_navigation_mdp, plan_to_goal
from ..modules.slam import RbpfState, map_estimate, run_filter
from ..rng import make_rng
from ..scenarios import RoomScenario
from ..serket import Bus, ConnectionKind, connect_items
from .common import SampleHistogram, purity, run_sample_rounds
from .link import LinkState, link_endpoints


class SpcoError(ValueError):
    pass


@dataclass
class SpcoConfig:
    n_places: int = 4
    n_categories: int = 4
    particles: int = 300
    rounds: int = 150
    burn_in: int = 50
    restarts: int = 4
    place_kappa: float = 0.01
    place_dof: float = 12.0
    place_var: float = 1.0  # expected per-axis variance of one place, in cells^2
    place_alpha: float = 10.0
    link_beta: float = 0.1
    link_gamma: float = 10.0
    word_beta: float = 0.1


def _expected_cov(p: NiwParams) -> np.ndarray:
    d = p.dof - p.D - 1
    return p.scale / (d if d > 0 else p.dof)


@dataclass
class SpcoLiteModel:
    place_means: np.ndarray  # R x 2 cell-center coordinates (x, y)
    place_covs: np.ndarray  # R x 2 x 2
    place_given_category: np.ndarray  # C x R
    category_prior: np.ndarray  # C
    word_given_category: np.ndarray  # C x V
    free: np.ndarray  # H x W navigation map
    vocab: list
    slam: Optional[RbpfState] = None
    pose_estimates: list = field(default_factory=list)
    teach_steps: list = field(default_factory=list)
    positions: Optional[np.ndarray] = None
    places: Optional[np.ndarray] = None  # per teaching event
    categories: Optional[np.ndarray] = None
    metrics: dict = field(default_factory=dict)
    gmm: Optional[GmmState] = None
    link: Optional[LinkState] = None
    words: Optional[CategoryObservationEndpoint] = None

    @property
    def R(self) -> int:
        return len(self.place_means)

    @property
    def C(self) -> int:
        return len(self.category_prior)

    def check(self) -> None:
        """Raise if any sub-state is internally inconsistent."""
        for name, m in (("place_given_category", self.place_given_category),
                        ("word_given_category", self.word_given_category)):
            if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1) > 1e-9):
                raise SpcoError(f"{name} rows must be distributions")
        if abs(self.category_prior.sum() - 1) > 1e-9:
            raise SpcoError("category prior must sum to 1")
        if self.gmm is not None and not self.gmm.cache_consistent():
            raise SpcoError("place mixture counts are stale")
        if self.link is not None and not self.link.cache_consistent():
            raise SpcoError("link counts are stale")
        if self.words is not None and not self.words.cache_consistent():
            raise SpcoError("word counts are stale")
        if self.slam is not None:
            self.slam.check()
        if self.gmm is not None and self.link is not None:
            if not np.array_equal(self.gmm.assignments, self.link.r):
                raise SpcoError("place indices disagree between mixture and link")

    def word_id(self, word) -> int:
        if isinstance(word, str):
            if word not in self.vocab:
                raise SpcoError(f"unknown word {word!r}")
            return self.vocab.index(word)
        w = int(word)
        if not 0 <= w < self.word_given_category.shape[1]:
            raise SpcoError(f"unknown word id {w}")
        return w


def place_posterior(model: SpcoLiteModel, word) -> np.ndarray:
    """p(place | word) = sum_c p(place | c) p(c | word), with p(c | word) by Bayes."""
    w = model.word_id(word)
    joint = model.word_given_category[:, w] * model.category_prior
    if joint.sum() <= 0:
        raise SpcoError(f"word {word!r} has zero probability under every category")
    p_cat = joint / joint.sum()
    return p_cat @ model.place_given_category


def _gauss_density(cells: np.ndarray, mean, cov) -> np.ndarray:
    d = cells - mean
    inv = np.linalg.inv(cov)
    q = np.einsum("ni,ij,nj->n", d, inv, d)
    return np.exp(-0.5 * q) / (2 * np.pi * np.sqrt(np.linalg.det(cov)))


def cell_goal_distribution(model: SpcoLiteModel, word) -> tuple:
    """Normalized p(cell | word) over the free cells; returns (cells, probs)."""
    pr = place_posterior(model, word)
    H, W = model.free.shape
    cells = np.array([(x, y) for y in range(H) for x in range(W) if model.free[y, x]], dtype=float)
    dens = sum(pr[r] * _gauss_density(cells, model.place_means[r], model.place_covs[r]) for r in range(model.R))
    return cells.astype(int), dens / dens.sum()


def room_of_word(model: SpcoLiteModel, word, rooms: np.ndarray) -> int:
    cells, p = cell_goal_distribution(model, word)
    x, y = cells[int(p.argmax())]
    return int(rooms[y, x])


@dataclass
class NavigationResult:
    path: list  # visited cells (x, y), start first
    actions: list
    goal_cells: np.ndarray
    goal_probs: np.ndarray
    place_probs: np.ndarray

    @property
    def end(self) -> tuple:
        return self.path[-1]


def spconavi_lite(model: SpcoLiteModel, word, start=None, gamma: float = 0.95, alpha: float = 1.0,
                  max_steps: Optional[int] = None) -> NavigationResult:
    """Plan toward where ``word`` is most probably said, from ``start`` (x, y)."""
    pr = place_posterior(model, word)
    cells, probs = cell_goal_distribution(model, word)
    mdp, grid = grid_navigation_mdp(model.free, gamma=gamma, alpha=alpha)
    if start is None:
        if not model.pose_estimates:
            raise SpcoError("no start given and the model has no pose estimates")
        start = model.pose_estimates[-1][:2]
    start = (int(start[0]), int(start[1]))
    if start not in grid.index:
        raise SpcoError(f"start {start} is not a free cell of the map")
    goal = np.full(mdp.S, -np.inf)
    with np.errstate(divide="ignore"):
        for (x, y), p in zip(cells, probs):
            goal[grid.index[(int(x), int(y))]] = np.log(p)
    plan = plan_to_goal(mdp, goal, grid.index[start], max_steps=max_steps)
    path = [grid.cells[s] for s in plan.states]
    return NavigationResult(path, [grid.actions[a] for a in plan.actions], cells, probs, pr)


def _sample_chain(pos, utterance_words, V, cfg, shape, seed, chain):
    R, C, N = cfg.n_places, cfg.n_categories, len(pos)
    H, W = shape
    prior = NiwParams(np.array([(W - 1) / 2, (H - 1) / 2]), cfg.place_kappa, cfg.place_dof,
                      np.eye(2) * cfg.place_var * (cfg.place_dof - 3))
    _, init = kmeans2(pos, R, minit="++", seed=make_rng(seed, f"spco-places-{chain}"))
    gmm = init_gmm(pos, R, prior, cfg.place_alpha, assignments=init)
    cat_init = init % C
    link = LinkState(N, R, C, cfg.link_beta, cfg.link_gamma, places=gmm.assignments, categories=cat_init)
    words = CategoryObservationEndpoint("words", utterance_words, C, V, prefix="cat",
                                        beta=cfg.word_beta, init=cat_init)
    bus = Bus(seed if chain == 0 else int(make_rng(seed, f"spco-chain-{chain}").integers(2**62)))
    bus.register(GmmEndpoint("places", gmm, prefix="place"))
    for ep in link_endpoints("link", link):
        bus.register(ep)
    bus.register(words)
    connect_items(bus, ConnectionKind.HEAD_TO_TAIL, "place", ("places", "link.place"), N)
    connect_items(bus, ConnectionKind.HEAD_TO_TAIL, "cat", ("link.cat", "words"), N)
    hp, hc = SampleHistogram("place", N, R), SampleHistogram("cat", N, C)
    run_sample_rounds(bus, cfg.rounds, cfg.burn_in, [hp, hc])
    score = gmm_log_joint(gmm, include_messages=False) + link.log_marginal() + words.log_marginal()
    return score, gmm, link, words, hp, hc


def fit_spco_lite(scenario: RoomScenario, config: Optional[SpcoConfig] = None, seed: int = 0) -> SpcoLiteModel:
    cfg = config or SpcoConfig()
    utts = [u for u in scenario.utterances if len(u["words"])]
    if not utts:
        raise SpcoError("the trajectory has no word observations")
    if len(scenario.actions) != len(scenario.observations):
        raise SpcoError("actions and observations differ in length")
    V = len(scenario.vocab)
    for u in utts:
        if not 0 <= u["step"] < len(scenario.actions):
            raise SpcoError(f"utterance step {u['step']} outside the trajectory")
        if any(not 0 <= w < V for w in u["words"]):
            raise SpcoError("word id outside the vocabulary")

    # 1. poses
    slam, est = run_filter(scenario.world, scenario.actions, scenario.observations, cfg.particles,
                           scenario.eps_move, scenario.eps_sense, make_rng(seed, "spco-slam"))
    steps = [int(u["step"]) for u in utts]
    pos = np.array([est[t][:2] for t in steps], dtype=float)

    # 2. place, link and word modules on the bus; keep the best of several chains
    best = None
    for chain in range(cfg.restarts):
        run = _sample_chain(pos, [u["words"] for u in utts], V, cfg, scenario.world.occupancy.shape,
                            seed, chain)
        if best is None or run[0] > best[0]:
            best = run
    _, gmm, link, words, hp, hc = best

    # 3. point estimates from the final sample
    posts = gmm.component_posteriors()
    means = np.array([p.mean0 for p in posts])
    covs = np.array([_expected_cov(p) for p in posts])
    model = SpcoLiteModel(means, covs, link.place_given_category(), link.category_prior(),
                          words.word_distributions(), map_estimate(slam) < 0.5, list(scenario.vocab),
                          slam=slam, pose_estimates=est, teach_steps=steps, positions=pos,
                          places=hp.mode(), categories=hc.mode(), gmm=gmm, link=link, words=words)
    model.metrics = spco_metrics(model, scenario)
    return model


def spco_metrics(model: SpcoLiteModel, scenario: RoomScenario) -> dict:
    out = {"purity": None, "word_acc": None, "pose_rmse": None}
    if scenario.true_poses:
        est = np.array([p[:2] for p in model.pose_estimates], float)
        tru = np.array([p[:2] for p in scenario.true_poses], float)
        out["pose_rmse"] = float(np.sqrt(((est - tru) ** 2).sum(axis=1).mean()))
        rooms = [int(scenario.rooms[scenario.true_poses[t][1], scenario.true_poses[t][0]]) for t in model.teach_steps]
        inside = [i for i, r in enumerate(rooms) if r >= 0]
        out["purity"] = purity(model.categories[inside], np.array(rooms)[inside]) if inside else None
    if scenario.room_words:
        hits = [room_of_word(model, w, scenario.rooms) == r for r, w in sorted(scenario.room_words.items())]
        out["word_acc"] = float(np.mean(hits))
    return out
