import ast
import json
from pathlib import Path

import numpy as np
import pytest

from wbpgm.cli import main
from wbpgm.modules.hmm import HmmParams, read_sequences, viterbi
from wbpgm.runner import ConfigError, RunConfig, config_hash, execute, parse_override

from conftest import data_path


def _json(path):
    return json.loads(Path(path).read_text())


# -- synth ----------------------------------------------------------------------------------

def test_synth_hmm_noiseless_decodes_to_truth(tmp_path):
    assert main(["synth", "hmm", "--K", "2", "--T", "100", "--seed", "7", "--out", str(tmp_path)]) == 0
    seqs = read_sequences(tmp_path / "sequences.jsonl")
    truth = _json(tmp_path / "truth.json")
    (sid, obs), = seqs
    m = truth["model"]
    hmm = HmmParams(np.array(m["initial"]), np.array(m["transition"]), np.array(m["emission"]))
    assert len(obs) == 100
    assert viterbi(hmm, obs).tolist() == truth["paths"][sid]


def test_synth_embeds_metadata(tmp_path):
    for kind in ("mixture", "gridworld", "spco", "proto", "objects"):
        out = tmp_path / kind
        assert main(["synth", kind, "--seed", "3", "--out", str(out)]) == 0
        for f in out.iterdir():
            meta = _json(f)["meta"]
            assert meta["seed"] == 3 and meta["kind"] == kind
            assert len(meta["config_hash"]) == 64


def test_synth_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "mixture", "--seed", "1", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a/mixture.json").read_bytes() == (tmp_path / "b/mixture.json").read_bytes()


def test_synth_gridworld_preset_is_bundled_world(tmp_path):
    from wbpgm.modules.slam import GridWorld
    from wbpgm.scenarios import load_room_scenario
    assert main(["synth", "gridworld", "--preset", "3rooms", "--seed", "0", "--out", str(tmp_path)]) == 0
    world = GridWorld.from_dict(_json(tmp_path / "world.json")["world"])
    bundled = load_room_scenario(data_path("three_room_scenario.json"))
    np.testing.assert_array_equal(world.occupancy, bundled.world.occupancy)


@pytest.mark.parametrize("argv", [["hmm", "--T", "0"], ["hmm", "--K", "0"], ["mixture", "--N", "0"],
                                  ["gridworld", "--width", "2"], ["spco", "--waypoints", "0"]])
def test_synth_zero_length_is_error(tmp_path, argv, capsys):
    assert main(["synth", *argv, "--seed", "0", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_synth_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "mixture", "--seed", "0", "--out", str(blocker / "sub")]) == 5


# -- run ------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def objects_scenario(tmp_path_factory):
    out = tmp_path_factory.mktemp("objects")
    assert main(["synth", "objects", "--seed", "2", "--out", str(out)]) == 0
    return out / "objects.json"


def _run(objects_scenario, out, *extra):
    return main(["run", "--seed", "5", "--scenario", str(objects_scenario),
                 "--composition", "bundled:mlda_words.composition.json", "--outputs", str(out), *extra])


def test_run_writes_stable_schema(objects_scenario, tmp_path):
    assert _run(objects_scenario, tmp_path) == 0
    doc = _json(tmp_path / "metrics.json")
    assert set(doc) == {"composition", "config_hash", "extra", "metrics", "params", "seed"}
    assert set(doc["metrics"]) == {"purity", "word_acc", "pose_rmse", "reward_trace"}
    assert doc["metrics"]["purity"] == 1.0 and doc["metrics"]["word_acc"] == 1.0
    log = (tmp_path / "run.log").read_text().splitlines()
    assert log[0] == f"config_hash={doc['config_hash']}" and log[1] == "seed=5"


def test_run_rerun_is_byte_identical(objects_scenario, tmp_path):
    assert _run(objects_scenario, tmp_path / "a") == 0
    assert _run(objects_scenario, tmp_path / "b") == 0
    for name in ("metrics.json", "run.log"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_config_file_and_overrides(objects_scenario, tmp_path):
    cfg = {"seed": 5, "scenario": str(objects_scenario), "composition": "bundled:mlda_words.composition.json",
           "outputs": "out", "overrides": {"rounds": 40}}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    assert main(["run", str(tmp_path / "run.json")]) == 0
    doc = _json(tmp_path / "out/metrics.json")
    assert doc["params"]["rounds"] == 40
    assert main(["run", str(tmp_path / "run.json"), "--set", "rounds=30", "--outputs", str(tmp_path / "o2")]) == 0
    doc2 = _json(tmp_path / "o2/metrics.json")
    assert doc2["params"]["rounds"] == 30 and doc2["config_hash"] != doc["config_hash"]


def test_config_hash_depends_on_contents_not_path(objects_scenario, tmp_path):
    copy = tmp_path / "renamed.json"
    copy.write_bytes(Path(objects_scenario).read_bytes())
    assert _run(objects_scenario, tmp_path / "a") == 0
    assert _run(copy, tmp_path / "b") == 0
    assert _json(tmp_path / "a/metrics.json")["config_hash"] == _json(tmp_path / "b/metrics.json")["config_hash"]
    h = config_hash(1, "x", {}, b"abc")
    assert h != config_hash(2, "x", {}, b"abc") and h != config_hash(1, "x", {}, b"abd")


def test_run_missing_scenario_exits_2(tmp_path, capsys):
    code = main(["run", "--seed", "0", "--scenario", str(tmp_path / "missing.json"),
                 "--composition", "bundled:spco_lite.composition.json", "--outputs", str(tmp_path)])
    assert code == 2
    assert "does not exist" in capsys.readouterr().err


@pytest.mark.parametrize("problem", ["no-seed", "unknown-composition", "unknown-param", "bad-json", "bool-seed"])
def test_run_config_errors_exit_2(objects_scenario, tmp_path, problem):
    comp = tmp_path / "comp.json"
    comp.write_text(json.dumps({"name": "mlda-words", "params": {}}))
    cfg = {"seed": 1, "scenario": str(objects_scenario), "composition": str(comp), "outputs": str(tmp_path / "o")}
    if problem == "no-seed":
        del cfg["seed"]
    elif problem == "bool-seed":
        cfg["seed"] = True
    elif problem == "unknown-composition":
        comp.write_text(json.dumps({"name": "nope"}))
    elif problem == "unknown-param":
        comp.write_text(json.dumps({"name": "mlda-words", "params": {"bogus": 1}}))
    elif problem == "bad-json":
        comp.write_text("{")
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    assert main(["run", str(tmp_path / "run.json")]) == 2


def test_run_degenerate_inference_exits_4(objects_scenario, tmp_path, monkeypatch):
    from wbpgm import runner
    from wbpgm.serket import DegenerateConsensusError

    def boom(*a):
        raise DegenerateConsensusError("all factors vanish")
    monkeypatch.setitem(runner.REGISTRY, "mlda-words", "tests_boom:boom")
    import sys
    import types
    mod = types.ModuleType("tests_boom")
    mod.boom = boom
    monkeypatch.setitem(sys.modules, "tests_boom", mod)
    assert _run(objects_scenario, tmp_path) == 4


def test_run_unwritable_outputs_exit_5(objects_scenario, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert _run(objects_scenario, blocker / "sub") == 5


def test_parse_override():
    assert parse_override("a=1") == ("a", 1)
    assert parse_override("b=[1, 2]") == ("b", [1, 2])
    assert parse_override("c=word") == ("c", "word")
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_seed_is_mandatory():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"scenario": "a", "composition": "b", "outputs": "c"})


def test_proto_run_reports_trace(tmp_path):
    assert main(["synth", "proto", "--seed", "0", "--out", str(tmp_path)]) == 0
    code = main(["run", "--seed", "1", "--scenario", str(tmp_path / "world.json"), "--composition",
                 "bundled:proto_agent.composition.json", "--outputs", str(tmp_path / "o"), "--set", "episodes=5"])
    assert code == 0
    doc = _json(tmp_path / "o/metrics.json")
    assert len(doc["metrics"]["reward_trace"]) == 5 and doc["metrics"]["purity"] is None
    assert doc["extra"]["oracle_reward"] > 0


# -- validate / decompose / dot / oracle-check -------------------------------------------

def test_validate_hippocampal_fixture(hpf_path, tmp_path, capsys):
    assert main(["validate-gipa", hpf_path, "--dot", str(tmp_path / "m.dot")]) == 0
    assert capsys.readouterr().out.startswith("ok:")
    assert (tmp_path / "m.dot").read_text().startswith("digraph")


def test_validate_cyclic_lists_cycle(capsys):
    assert main(["validate-gipa", data_path("hcd_cyclic.json")]) == 2
    assert "cycle:" in capsys.readouterr().err


def test_validate_malformed_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"components": [')
    assert main(["validate-gipa", str(bad)]) == 3


def test_validate_unannotated_is_allocation_error():
    assert main(["validate-gipa", data_path("hcd_unannotated.json")]) == 2


def test_decompose_prints_modules(capsys):
    assert main(["decompose", data_path("spcoslam_model.json"), "--cut", "position", "place_category"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["modules"]) == 4
    original = _json(data_path("spcoslam_model.json"))
    assert sum(len(m["edges"]) for m in doc["modules"]) == len(original["edges"])


def test_decompose_at_leaf_is_error(tmp_path):
    from wbpgm.core.graph import model_from_edges
    p = tmp_path / "chain.json"
    p.write_text(model_from_edges([("a", "b"), ("b", "c")], observed=["c"]).to_json())
    assert main(["decompose", str(p), "--cut", "b"]) == 0
    assert main(["decompose", str(p), "--cut", "c"]) == 2


def test_export_dot_model_and_hcd(hpf_path, tmp_path, capsys):
    assert main(["export-dot", data_path("spcoslam_model.json")]) == 0
    assert capsys.readouterr().out.startswith("digraph")
    assert main(["export-dot", hpf_path, "--out", str(tmp_path / "h.dot")]) == 0
    assert "->" in (tmp_path / "h.dot").read_text()


def test_oracle_check_hmm_all_pass(tmp_path, capsys):
    assert main(["oracle-check", "hmm", "--json", str(tmp_path / "t.json")]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out
    assert all(r["pass"] for r in _json(tmp_path / "t.json"))


def test_oracle_check_unknown_lists_suites(capsys):
    assert main(["oracle-check", "nope"]) == 2
    err = capsys.readouterr().err
    for name in ("hmm", "gmm", "mlda", "planning", "slam", "serket", "all"):
        assert name in err


# -- architecture --------------------------------------------------------------------------

def test_oracle_is_independent_of_modules():
    import wbpgm.oracle as oracle
    tree = ast.parse(Path(oracle.__file__).read_text())
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            imported.add(("." * node.level) + (node.module or ""))
        elif isinstance(node, ast.Import):
            imported.update(a.name for a in node.names)
    local = {m for m in imported if m.startswith(".")}
    assert all(m.startswith((".core", ".rng")) for m in local), local
    assert not any(m.startswith("wbpgm") for m in imported)
