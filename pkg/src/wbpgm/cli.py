"""Command-line entry point (``wbpgm``).

Exit codes: 0 success, 1 oracle check failed, 2 configuration or allocation
error, 3 parse error, 4 degenerate inference, 5 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_PARSE, EXIT_DEGENERATE, EXIT_IO = 0, 1, 2, 3, 4, 5


class UsageError(ValueError):
    pass


def _meta(kind: str, seed: int, params: dict) -> dict:
    body = {"kind": kind, "seed": seed, "params": params}
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    return dict(body, config_hash=digest)


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


# -- synth ------------------------------------------------------------------------------

def _positive(name: str, value: int) -> int:
    if value < 1:
        raise UsageError(f"{name} must be >= 1 (got {value})")
    return value


def _synth_mixture(args, out: Path) -> list:
    from .rng import make_rng
    N, K, D = _positive("N", args.N), _positive("K", args.K), _positive("D", args.D)
    params = {"N": N, "K": K, "D": D, "separation": args.separation}
    rng = make_rng(args.seed, "synth-mixture")
    means = rng.normal(0.0, args.separation, size=(K, D))
    labels = rng.integers(K, size=N)
    points = means[labels] + rng.normal(size=(N, D))
    _dump(out / "mixture.json", {"meta": _meta("mixture", args.seed, params), "points": points.tolist(),
                                 "labels": labels.tolist(), "means": means.tolist()})
    return ["mixture.json"]


def _synth_hmm(args, out: Path) -> list:
    from .modules.hmm import HmmParams, sample_hmm
    from .rng import make_rng
    K, T = _positive("K", args.K), _positive("T", args.T)
    V = K if args.V is None else _positive("V", args.V)
    if not 0.0 <= args.noise <= 1.0 or not 0.0 <= args.stay <= 1.0:
        raise UsageError("noise and stay must lie in [0, 1]")
    params = {"K": K, "T": T, "V": V, "noise": args.noise, "stay": args.stay}
    rng = make_rng(args.seed, "synth-hmm")
    trans = np.full((K, K), (1 - args.stay) / max(K - 1, 1))
    np.fill_diagonal(trans, args.stay if K > 1 else 1.0)
    emis = np.full((K, V), args.noise / V)
    emis[np.arange(K), np.arange(K) % V] += 1 - args.noise
    hmm = HmmParams(np.full(K, 1.0 / K), trans, emis)
    z, x = sample_hmm(hmm, T, rng)
    meta = _meta("hmm", args.seed, params)
    with open(out / "sequences.jsonl", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        fh.write(json.dumps({"id": "seq0", "obs": x.tolist()}) + "\n")
    _dump(out / "truth.json", {"meta": meta, "paths": {"seq0": z.tolist()},
                               "model": {"initial": hmm.initial.tolist(), "transition": hmm.transition.tolist(),
                                         "emission": hmm.emission.tolist()}})
    return ["sequences.jsonl", "truth.json"]


def _synth_gridworld(args, out: Path) -> list:
    from .modules.slam import GridWorld
    from .scenarios import THREE_ROOM_BOXES, THREE_ROOM_ROWS, TWO_ROOM_BOXES, TWO_ROOM_ROWS, room_map
    if args.preset:
        rows, boxes = {"3rooms": (THREE_ROOM_ROWS, THREE_ROOM_BOXES),
                       "2rooms": (TWO_ROOM_ROWS, TWO_ROOM_BOXES)}[args.preset]
        occ = np.array([[c == "#" for c in r] for r in rows])
        rooms = room_map(rows, boxes).tolist()
        params = {"preset": args.preset}
    else:
        if args.width < 3 or args.height < 3:
            raise UsageError("width and height must be >= 3 (a bordered world needs an interior)")
        occ = np.zeros((args.height, args.width), dtype=bool)
        occ[0] = occ[-1] = True
        occ[:, 0] = occ[:, -1] = True
        rooms = None
        params = {"width": args.width, "height": args.height}
    doc = {"meta": _meta("gridworld", args.seed, params), "world": GridWorld(occ).to_dict()}
    if rooms is not None:
        doc["rooms"] = rooms
    _dump(out / "world.json", doc)
    return ["world.json"]


def _synth_spco(args, out: Path) -> list:
    from .scenarios import three_room_scenario
    n = _positive("waypoints", args.waypoints)
    params = {"preset": "3rooms", "waypoints": n, "p_teach": args.p_teach}
    sc = three_room_scenario(seed=args.seed, n_waypoints=n, p_teach=args.p_teach)
    _dump(out / "scenario.json", dict(sc.to_dict(), meta=_meta("spco", args.seed, params)))
    return ["scenario.json"]


def _synth_proto(args, out: Path) -> list:
    from .scenarios import two_room_world
    goal = None if args.no_goal else tuple(args.goal)
    params = {"preset": "2rooms", "goal": None if goal is None else list(goal), "max_steps": args.max_steps}
    world = two_room_world(goal=goal, max_steps=_positive("max_steps", args.max_steps))
    _dump(out / "world.json", dict(world.to_dict(), meta=_meta("proto", args.seed, params)))
    return ["world.json"]


def _synth_objects(args, out: Path) -> list:
    from .scenarios import synth_object_corpus
    params = {"categories": _positive("categories", args.categories),
              "per_category": _positive("per_category", args.per_category), "noise": args.noise}
    corpus, labels, words = synth_object_corpus(args.seed, args.categories, args.per_category,
                                                feature_noise=args.noise)
    _dump(out / "objects.json", {"meta": _meta("objects", args.seed, params),
                                 "corpus": {"ids": corpus.ids, "modalities": corpus.modalities,
                                            "docs": corpus.docs},
                                 "labels": list(map(int, labels)), "true_words": list(map(int, words))})
    return ["objects.json"]


SYNTH = {"mixture": _synth_mixture, "hmm": _synth_hmm, "gridworld": _synth_gridworld,
         "spco": _synth_spco, "proto": _synth_proto, "objects": _synth_objects}


def cmd_synth(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = SYNTH[args.kind](args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for name in written:
        print(out / name)
    return EXIT_OK


# -- run ----------------------------------------------------------------------------------

def cmd_run(args) -> int:
    from .runner import ConfigError, DegenerateRunError, RunConfig, execute, parse_override
    try:
        if args.config:
            cfg = RunConfig.from_file(args.config)
        else:
            cfg = RunConfig.from_dict({"seed": args.seed, "scenario": args.scenario,
                                       "composition": args.composition, "outputs": args.outputs})
        if args.config:  # command-line values take precedence over the file
            for key in ("seed", "scenario", "composition", "outputs"):
                val = getattr(args, key)
                if val is not None:
                    if key != "seed" and not val.startswith("bundled:"):
                        val = str(Path(val).resolve())
                    setattr(cfg, key, val)
        for text in args.set or ():
            key, value = parse_override(text)
            cfg.overrides[key] = value
        doc = execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateRunError as exc:
        print(f"degenerate inference: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(doc["metrics"], sort_keys=True))
    return EXIT_OK


# -- GIPA / models ------------------------------------------------------------------------------

def _load_model_or_hcd(path: str):
    """Return a GraphicalModel from either a model file or an HCD file (HCDs are allocated)."""
    from .core.graph import GraphicalModel
    from .gipa import allocate, parse_hcd
    text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    if isinstance(doc, dict) and "nodes" in doc:
        return GraphicalModel.from_dict(doc)
    model, _ = allocate(parse_hcd(text))
    return model


def cmd_validate(args) -> int:
    from .core.graph import to_dot
    from .gipa import AllocationError, HcdParseError, allocate, parse_hcd, validate_amortized
    try:
        text = Path(args.file).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        graph = parse_hcd(text)
        model, allocation = allocate(graph)
    except HcdParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except AllocationError as exc:
        print(f"allocation error: {exc}", file=sys.stderr)
        for cycle in exc.cycles:
            print("cycle: " + " -> ".join(tuple(cycle) + (cycle[0],)), file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: {len(graph.components)} components, {len(graph.interfaces)} interfaces, "
          f"{len(model.nodes)} variables, {len(model.edges)} edges")
    for f in graph.interfaces:
        kind = allocation.assignments[f.id].value
        suffix = " (next time)" if f.id in allocation.delta_t else ""
        print(f"  {f.id}: {kind}{suffix}")
    for w in validate_amortized(model).warnings:
        print(f"warning: {w}")
    if args.dot:
        try:
            Path(args.dot).write_text(to_dot(model), encoding="utf-8")
        except OSError as exc:
            print(f"I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
    return EXIT_OK


def cmd_decompose(args) -> int:
    from .core.graph import ModelError
    from .gipa import AllocationError, HcdParseError
    from .serket import decompose_reference
    try:
        model = _load_model_or_hcd(args.model)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (json.JSONDecodeError, HcdParseError, KeyError, TypeError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ModelError, AllocationError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        parts = decompose_reference(model, args.cut)
    except ModelError as exc:
        print(f"decomposition error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"cut": args.cut, "modules": [p.to_dict() for p in parts]}, indent=1))
    return EXIT_OK


def cmd_export_dot(args) -> int:
    from .core.graph import ModelError, to_dot
    from .gipa import AllocationError, HcdParseError
    try:
        model = _load_model_or_hcd(args.file)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (json.JSONDecodeError, HcdParseError, KeyError, TypeError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ModelError, AllocationError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    dot = to_dot(model)
    if args.out:
        try:
            Path(args.out).write_text(dot, encoding="utf-8")
        except OSError as exc:
            print(f"I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
    else:
        sys.stdout.write(dot)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .suites import UnknownSuiteError, rows_to_json, run_suite
    try:
        rows = run_suite(args.suite)
    except UnknownSuiteError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    for r in rows:
        print(r.line())
    passed = sum(r.ok for r in rows)
    print(f"{passed}/{len(rows)} checks passed")
    if args.json:
        try:
            Path(args.json).write_text(rows_to_json(rows) + "\n", encoding="utf-8")
        except OSError as exc:
            print(f"I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
    return EXIT_OK if passed == len(rows) else EXIT_FAIL


# -- parser -------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wbpgm", description="Modular probabilistic generative models toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("kind", choices=sorted(SYNTH))
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", default=".")
    s.add_argument("--N", type=int, default=200, help="mixture: points")
    s.add_argument("--K", type=int, default=3, help="mixture components or hmm states")
    s.add_argument("--D", type=int, default=2, help="mixture: dimension")
    s.add_argument("--separation", type=float, default=6.0, help="mixture: spread of the means")
    s.add_argument("--T", type=int, default=100, help="hmm: sequence length")
    s.add_argument("--V", type=int, default=None, help="hmm: alphabet size (default K)")
    s.add_argument("--noise", type=float, default=0.0, help="hmm emission / object feature noise")
    s.add_argument("--stay", type=float, default=0.8, help="hmm: self-transition probability")
    s.add_argument("--preset", choices=["3rooms", "2rooms"], default=None, help="gridworld preset")
    s.add_argument("--width", type=int, default=8)
    s.add_argument("--height", type=int, default=8)
    s.add_argument("--waypoints", type=int, default=36, help="spco: tour waypoints")
    s.add_argument("--p-teach", dest="p_teach", type=float, default=0.3, help="spco: teaching probability")
    s.add_argument("--goal", type=int, nargs=2, default=(5, 3), metavar=("X", "Y"), help="proto: goal cell")
    s.add_argument("--no-goal", action="store_true", help="proto: zero-reward world")
    s.add_argument("--max-steps", dest="max_steps", type=int, default=30, help="proto: episode length")
    s.add_argument("--categories", type=int, default=3, help="objects: categories")
    s.add_argument("--per-category", dest="per_category", type=int, default=10, help="objects: objects per category")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="execute a composition from a run configuration")
    r.add_argument("config", nargs="?", help="RunConfig JSON file")
    r.add_argument("--seed", type=int)
    r.add_argument("--scenario")
    r.add_argument("--composition")
    r.add_argument("--outputs")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a composition parameter")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate-gipa", help="allocate and validate a component diagram")
    v.add_argument("file")
    v.add_argument("--dot")
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle-check", help="run an oracle-equivalence suite")
    o.add_argument("suite")
    o.add_argument("--json", help="also write the table as JSON")
    o.set_defaults(func=cmd_oracle_check)

    d = sub.add_parser("decompose", help="print the decomposition of a model at shared nodes")
    d.add_argument("model")
    d.add_argument("--cut", nargs="+", required=True)
    d.set_defaults(func=cmd_decompose)

    e = sub.add_parser("export-dot", help="write a model or component diagram as Graphviz DOT")
    e.add_argument("file")
    e.add_argument("--out")
    e.set_defaults(func=cmd_export_dot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
