from __future__ import annotations

import json
import subprocess
import sys

import pytest

from cgiagent import forge
from cgiagent.cli import main


@pytest.fixture(scope="module")
def tasks(tmp_path_factory):
    path = tmp_path_factory.mktemp("tasks") / "tasks.json"
    assert main(["gen-tasks", "--depth", "2", "--branching", "2", "--count", "20", "--seed", "3", "--out", str(path)]) == 0
    return path


def run(tmp_path, tasks, *extra, run_id="r"):
    return main(["run", "--tasks", str(tasks), "--out", str(tmp_path), "--run-id", run_id, *extra])


def report(path):
    return json.loads((path / "report.json").read_text())


def test_gen_tasks(tmp_path):
    out = tmp_path / "t.json"
    assert main(["gen-tasks", "--depth", "1", "--count", "5", "--seed", "1", "--out", str(out)]) == 0
    data = json.loads(out.read_text())["tasks"]
    assert len(data) == 5 and all(len(t["gold_path"]) == 2 for t in data)
    first = out.read_bytes()
    assert main(["gen-tasks", "--depth", "1", "--count", "5", "--seed", "1", "--out", str(out)]) == 2
    assert main(["gen-tasks", "--depth", "1", "--count", "5", "--seed", "1", "--out", str(out), "--force"]) == 0
    assert out.read_bytes() == first


def test_usage_errors(tmp_path, tasks):
    assert main(["gen-tasks", "--depth", "0", "--count", "5", "--out", str(tmp_path / "x.json")]) == 2
    assert main(["run", "--tasks", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert main(["run", "--tasks", str(tasks), "--out", str(tmp_path), "--m", "0"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_run_perfect_actor_and_oracle(tmp_path, tasks):
    assert run(tmp_path, tasks, "--critic", "off", "--fidelity", "1.0", run_id="a") == 0
    assert report(tmp_path / "a")["overall"]["success_rate"] == 1.0
    assert run(tmp_path, tasks, "--critic", "oracle", "--fidelity", "0.0", run_id="b") == 0
    rep = report(tmp_path / "b")
    assert rep["overall"]["success_rate"] == 1.0 and rep["overall"]["n_episodes"] == 20
    assert json.loads((tmp_path / "b" / "config.json").read_text())["fidelity"] == 0.0


def test_run_is_deterministic_and_refuses_overwrite(tmp_path, tasks):
    assert run(tmp_path, tasks, "--fidelity", "0.3", "--critic-noise", "0.2", run_id="x") == 0
    first = (tmp_path / "x" / "report.json").read_bytes()
    assert run(tmp_path, tasks, "--fidelity", "0.3", "--critic-noise", "0.2", run_id="x") == 2
    assert run(tmp_path, tasks, "--fidelity", "0.3", "--critic-noise", "0.2", "--force", run_id="x") == 0
    assert (tmp_path / "x" / "report.json").read_bytes() == first


def test_backend_unavailable_exits_1(tmp_path, tasks, monkeypatch):
    monkeypatch.delenv("ACTOR_ENDPOINT", raising=False)
    assert run(tmp_path, tasks, "--actor", "remote", run_id="down") == 1


def test_config_file_and_overrides(tmp_path, tasks):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'[env]\ntasks = "{tasks}"\n[actor]\nfidelity = 1.0\n[critic]\nkind = "none"\n[run]\nseed = 4\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path), "--run-id", "c", "--seed", "5"]) == 0
    snap = json.loads((tmp_path / "c" / "config.json").read_text())
    assert snap["seed"] == 5 and snap["fidelity"] == 1.0 and snap["critic"] == "none"
    bad = tmp_path / "bad.toml"
    bad.write_text('[actor]\napi_key = "sk-123"\n')
    assert main(["run", "--config", str(bad), "--tasks", str(tasks), "--out", str(tmp_path)]) == 2


def test_iterate(tmp_path, tasks, capsys):
    assert main(["iterate", "--tasks", str(tasks), "--out", str(tmp_path), "--run-id", "it", "--fidelity", "0.3", "--beta", "1.0"]) == 0
    table = capsys.readouterr().out
    assert "round  episodes" in table and table.count("\n") >= 5
    manifests = sorted((tmp_path / "it").glob("round_*/datasets/manifest_round*.json"))
    assert len(manifests) == 3 and all(forge.verify_manifest(m) == [] for m in manifests)
    counts = [json.loads(m.read_text())["files"]["train.json"]["records"] for m in manifests]
    assert counts == sorted(counts)
    assert main(["iterate", "--tasks", str(tasks), "--out", str(tmp_path), "--run-id", "it2", "--beta", "0.8"]) == 2


def test_iterate_k1_matches_run(tmp_path, tasks):
    assert run(tmp_path, tasks, "--fidelity", "0.3", run_id="same") == 0
    assert main(["iterate", "--tasks", str(tasks), "--out", str(tmp_path / "it"), "--run-id", "same", "--fidelity", "0.3", "--beta", "1", "--rounds", "1"]) == 0
    a = sorted((tmp_path / "same/round_1/trajectories").iterdir())
    b = sorted((tmp_path / "it/same/round_1/trajectories").iterdir())
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    assert (tmp_path / "it/same/round_1/datasets/train.json").exists()


def test_iterate_hook_failure_keeps_rounds(tmp_path, tasks):
    hook = f"{sys.executable} -c \"import sys; sys.exit(1)\""
    code = main(["iterate", "--tasks", str(tasks), "--out", str(tmp_path), "--run-id", "h", "--beta", "1", "--trainer-hook", hook])
    assert code == 1
    assert (tmp_path / "h/round_1/datasets/mixed_round1.json").exists()
    assert not (tmp_path / "h/round_2").exists()


def test_collect_critiques(tmp_path, tasks):
    assert main(["collect-critiques", "--tasks", str(tasks), "--out", str(tmp_path), "--run-id", "cc", "--fidelity", "0.5", "--rounds", "1"]) == 0
    recs = forge.load_records(tmp_path / "cc/round_1/datasets/critique.json")
    assert recs and all(r.pool == "critique" for r in recs)


def test_mix(tmp_path):
    agentic = [
        forge.DatasetRecord((("human", f"h{i}"), ("gpt", "g")), "", "correct", forge.Provenance("r", 1, f"t{i}")) for i in range(100)
    ]
    general = [forge.DatasetRecord((("human", f"q{i}"), ("gpt", "a")), "", "general") for i in range(100)]
    forge.write_records(tmp_path / "a.json", agentic)
    forge.write_records(tmp_path / "g.json", general)
    base = ["mix", "--agentic", str(tmp_path / "a.json")]
    assert main([*base, "--beta", "1.0", "--n", "10", "--out", str(tmp_path / "m1.json")]) == 0
    assert main([*base, "--beta", "0.8", "--general", str(tmp_path / "g.json"), "--n", "100", "--out", str(tmp_path / "m2.json")]) == 0
    mix = json.loads((tmp_path / "manifest_m2.json").read_text())["mix"]
    assert (mix["agentic"], mix["general"]) == (80, 20)
    assert main(["mix", "--agentic", str(tmp_path / "nope.json"), "--beta", "1", "--out", str(tmp_path / "m3.json")]) == 2
    assert main([*base, "--beta", "0.5", "--out", str(tmp_path / "m4.json")]) == 2
    forge.write_records(tmp_path / "empty.json", [])
    assert main(["mix", "--agentic", str(tmp_path / "empty.json"), "--beta", "1", "--out", str(tmp_path / "m5.json")]) == 1


def test_eval(tmp_path, tasks):
    assert run(tmp_path, tasks, "--fidelity", "0.3", run_id="e1") == 0
    assert run(tmp_path, tasks, "--fidelity", "0.5", "--seed", "9", run_id="e2") == 0
    assert main(["eval", str(tmp_path / "e1"), "--out", str(tmp_path / "ev1")]) == 0
    assert (tmp_path / "ev1/report.json").read_bytes() == (tmp_path / "e1/report.json").read_bytes()
    assert main(["eval", str(tmp_path / "e1"), str(tmp_path / "e2"), "--out", str(tmp_path / "ev2")]) == 0
    both = report(tmp_path / "ev2")
    assert both["overall"]["n_episodes"] == 40 and set(both["runs"]) == {"e1", "e2"}
    victim = sorted((tmp_path / "e2/round_1/trajectories").iterdir())[0]
    victim.write_text(victim.read_text()[:-20] + "\n")
    assert main(["eval", str(tmp_path / "e1"), "--out", str(tmp_path / "ev3")]) == 0
    assert main(["eval", str(tmp_path / "e1"), str(tmp_path / "e2"), "--out", str(tmp_path / "ev4")]) == 0
    broken = report(tmp_path / "ev4")
    assert broken["corrupt"] == 1 and broken["overall"]["n_episodes"] == 39
    assert broken["runs"]["e1"] == both["runs"]["e1"]
    assert main(["eval", str(tmp_path / "missing"), "--out", str(tmp_path / "ev5")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cgiagent", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gen-tasks" in proc.stdout
