"""Experiment execution from explicit run configurations.

A run configuration names a seed, a scenario file, a composition file, an
output directory and optional parameter overrides.  A composition file is
``{"name": <registered composition>, "params": {...}}``.  Paths may be given
as ``bundled:<file>`` to refer to files shipped with the package.  Outputs
are deterministic: the same configuration and seed give byte-identical files.
"""
from __future__ import annotations

import dataclasses
import hashlib
import importlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class ConfigError(ValueError):
    """Invalid or incomplete configuration (exit code 2)."""


class DegenerateRunError(RuntimeError):
    """Inference reached a degenerate state (exit code 4)."""


# name -> "module:function"; imported only when the composition is run
REGISTRY = {
    "spco-lite": "wbpgm.runner:run_spco_lite",
    "mlda-words": "wbpgm.runner:run_mlda_words",
    "proto-agent": "wbpgm.runner:run_proto_agent",
}

METRIC_KEYS = ("purity", "word_acc", "pose_rmse", "reward_trace")


def resolve_path(value: str, base: Path | None = None) -> Path:
    if value.startswith("bundled:"):
        return Path(str(resources.files("wbpgm") / "data" / value[len("bundled:"):]))
    p = Path(value)
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


@dataclass
class RunConfig:
    seed: int
    scenario: str
    composition: str
    outputs: str
    overrides: dict = field(default_factory=dict)
    base: str | None = None  # directory that relative paths are resolved against

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, base=str(path.parent))

    @classmethod
    def from_dict(cls, doc: dict, base: str | None = None) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        missing = [k for k in ("seed", "scenario", "composition", "outputs") if doc.get(k) is None]
        if missing:
            raise ConfigError(f"config is missing {missing}")
        unknown = set(doc) - {"seed", "scenario", "composition", "outputs", "overrides"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(doc["seed"], doc["scenario"], doc["composition"], doc["outputs"],
                   dict(doc.get("overrides") or {}), base)

    def validate(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        base = Path(self.base) if self.base else None
        for key in ("scenario", "composition"):
            if not resolve_path(getattr(self, key), base).is_file():
                raise ConfigError(f"{key} path does not exist: {getattr(self, key)}")

    def scenario_path(self) -> Path:
        return resolve_path(self.scenario, Path(self.base) if self.base else None)

    def composition_path(self) -> Path:
        return resolve_path(self.composition, Path(self.base) if self.base else None)

    def outputs_path(self) -> Path:
        p = Path(self.outputs)
        return p if p.is_absolute() or not self.base else Path(self.base) / p


def parse_override(text: str) -> tuple:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_composition(path: Path) -> tuple:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"composition file is not valid JSON: {exc}") from exc
    name = doc.get("name") if isinstance(doc, dict) else None
    if name not in REGISTRY:
        raise ConfigError(f"unknown composition {name!r}; registered: {sorted(REGISTRY)}")
    params = doc.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("composition params must be an object")
    return name, dict(params)


def config_hash(seed: int, name: str, params: dict, scenario_bytes: bytes) -> str:
    doc = {"seed": seed, "composition": name, "params": params,
           "scenario_sha256": hashlib.sha256(scenario_bytes).hexdigest()}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _dataclass_params(cls, params: dict, extra=()):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(params) - names - set(extra)
    if unknown:
        raise ConfigError(f"unknown parameters {sorted(unknown)}")
    try:
        return cls(**{k: v for k, v in params.items() if k in names})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from exc


# -- composition runners: (scenario path, params, seed) -> (metrics, extra, log lines) -------

def run_spco_lite(scenario: Path, params: dict, seed: int):
    from .compositions.spco import SpcoConfig, SpcoError, fit_spco_lite, spconavi_lite
    from .scenarios import RoomScenario
    cfg = _dataclass_params(SpcoConfig, params, extra=("navigate",))
    try:
        sc = RoomScenario.from_dict(_read_json(scenario))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad spco scenario: {exc}") from exc
    try:
        model = fit_spco_lite(sc, cfg, seed=seed)
    except SpcoError as exc:
        raise ConfigError(str(exc)) from exc
    extra = {"places": model.R, "categories": model.C, "teaching_events": len(model.teach_steps)}
    nav = {}
    for word in params.get("navigate", []):
        res = spconavi_lite(model, word)
        nav[str(word)] = [list(c) for c in res.path]
    if nav:
        extra["paths"] = nav
    log = [f"fitted {model.R} places and {model.C} categories on {len(model.teach_steps)} teaching events"]
    return dict(model.metrics, reward_trace=None), extra, log


def run_mlda_words(scenario: Path, params: dict, seed: int):
    from .compositions.mlda_words import fit_mlda_words
    from .modules.mlda import Corpus
    doc = _read_json(scenario)
    try:
        c = doc["corpus"]
        corpus = Corpus(list(c["ids"]), list(c["modalities"]), c["docs"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad objects scenario: {exc}") from exc
    allowed = {"K", "rounds", "burn_in", "alpha", "beta", "word_beta", "word_modality"}
    if set(params) - allowed:
        raise ConfigError(f"unknown parameters {sorted(set(params) - allowed)}")
    kw = dict(params)
    K = int(kw.pop("K", len(set(doc.get("labels", []))) or 3))
    res = fit_mlda_words(corpus, K, seed=seed, labels=doc.get("labels"), true_words=doc.get("true_words"), **kw)
    metrics = {"purity": res.purity, "word_acc": res.word_acc, "pose_rmse": None, "reward_trace": None}
    extra = {"word_map": {str(k): v for k, v in sorted(res.word_map.items())},
             "categories": res.categories.tolist()}
    return metrics, extra, [f"fitted {K} categories on {corpus.n_objects} objects"]


def run_proto_agent(scenario: Path, params: dict, seed: int):
    from .compositions.proto import ProtoAgentError, ProtoConfig, build_proto_agent, run_proto_agent as run
    from .scenarios import AgentWorld
    cfg = _dataclass_params(ProtoConfig, params, extra=("episodes",))
    try:
        world = AgentWorld.from_dict(_read_json(scenario))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad agent world: {exc}") from exc
    episodes = int(params.get("episodes", 100))
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    try:
        rep = run(build_proto_agent(world, seed=seed, config=cfg), world, episodes, seed=seed)
    except ProtoAgentError as exc:
        raise ConfigError(str(exc)) from exc
    metrics = {"purity": None, "word_acc": None, "pose_rmse": None, "reward_trace": rep.reward_trace}
    extra = {"oracle_reward": rep.oracle_reward, "final_mean": rep.final_mean(),
             "policy_deviation": rep.policy_deviation}
    return metrics, extra, [f"ran {episodes} episodes; final mean {rep.final_mean():.6f}"]


def execute(cfg: RunConfig) -> dict:
    """Run one configuration and write ``metrics.json`` and ``run.log`` into the output directory."""
    cfg.validate()
    name, params = load_composition(cfg.composition_path())
    params.update(cfg.overrides)
    scenario_bytes = cfg.scenario_path().read_bytes()
    digest = config_hash(cfg.seed, name, params, scenario_bytes)
    module, func = REGISTRY[name].split(":")
    runner = getattr(importlib.import_module(module), func)
    from .modules.slam import DegenerateFilterError
    from .serket import DegenerateConsensusError
    try:
        metrics, extra, log = runner(cfg.scenario_path(), params, cfg.seed)
    except (DegenerateConsensusError, DegenerateFilterError, FloatingPointError) as exc:
        raise DegenerateRunError(str(exc)) from exc
    doc = {"config_hash": digest, "seed": cfg.seed, "composition": name, "params": params,
           "metrics": {k: metrics.get(k) for k in METRIC_KEYS}, "extra": extra}
    out = cfg.outputs_path()
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    lines = [f"config_hash={digest}", f"seed={cfg.seed}", f"composition={name}"] + log
    (out / "run.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return doc
