from __future__ import annotations

import json
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from cgiagent import forge
from cgiagent.forge import (
    DatasetRecord,
    EmptyPool,
    MissingCritiques,
    MixSpec,
    Provenance,
    RewardFilterViolation,
    SchemaError,
    agentic_count,
    build_correct_records,
    build_critique_records,
    build_expert_records,
    build_refine_records,
    check_schema,
    dedup,
    load_records,
    mix_records,
    union_train,
)
from cgiagent.orchestrator import EpisodeConfig, harvest, replay_gold, run_episode
from cgiagent.policy import ActorConfig
from cgiagent.policy.prompts import system_prompt


def episode(task, p: float, mode: str = "per-step"):
    return run_episode(EpisodeConfig(actor=ActorConfig(fidelity=p), critique_mode=mode), task, round=1, run_id="r")


def general(n: int) -> list[DatasetRecord]:
    return [DatasetRecord((("human", f"q{i}"), ("gpt", f"a{i}")), "", "general") for i in range(n)]


def agentic(n: int) -> list[DatasetRecord]:
    return [
        DatasetRecord((("human", f"task {i}"), ("gpt", "Thought: t\nAction: inventory")), "s", "correct", Provenance("r", 1, f"t{i}"))
        for i in range(n)
    ]


# -- builders on the hand-built stick task (gold length 3, M = 5) ------------------


def test_counts_for_perfect_actor(stick):
    h = harvest(1, [episode(stick, 1.0)])
    assert len(build_critique_records(h)) == 15
    assert len(build_refine_records(h)) == 3
    assert len(build_refine_records(h, only_revised=True)) == 0
    (rec,) = build_correct_records(h)
    assert rec.pool == "correct" and rec.system == system_prompt("craftsim")
    assert [r for r, _ in rec.conversations] == ["human", "gpt", "human", "gpt", "human", "gpt"]
    assert rec.conversations[0][1] == stick.instruction.text
    assert rec.conversations[-1][1].endswith("Action: craft 4 stick using 2 oak planks")


def test_worst_actor_every_step_revised(stick):
    h = harvest(1, [episode(stick, 0.0)])
    assert len(build_refine_records(h, only_revised=True)) == 3
    rec = build_refine_records(h)[1]
    human, gpt = rec.conversations[0][1], rec.conversations[1][1]
    assert "Critique" in human or "critique" in human
    assert gpt.endswith("Action: craft 4 oak planks using oak log")
    assert rec.provenance == Provenance("r", 1, "stick-1", 1, "craftsim", None)


def test_critique_records_never_show_gold(stick):
    h = harvest(1, [episode(stick, 0.0)])
    for rec in build_critique_records(h):
        assert rec.pool == "critique" and rec.system == ""
        assert "Gold" not in rec.conversations[0][1] and "gold" not in rec.conversations[0][1]
        assert "## Overall Grading:" in rec.conversations[1][1]


def test_reward_filter(stick):
    failed = episode(stick, 0.0, mode="off")
    failed = replace(failed, steps=failed.steps[:1])
    for build in (build_correct_records, build_critique_records, build_refine_records, build_expert_records):
        with pytest.raises(RewardFilterViolation):
            build([failed])
    h = harvest(1, [failed])
    assert h.d_correct == [] and build_correct_records(h) == []


def test_refine_requires_critiques(stick):
    with pytest.raises(MissingCritiques):
        build_refine_records([episode(stick, 1.0, mode="off")])


def test_expert_records(stick):
    (rec,) = build_expert_records([replay_gold(EpisodeConfig(), stick, run_id="r")])
    assert rec.pool == "expert" and rec.provenance.round == 0


# -- set algebra -------------------------------------------------------------------


def test_union_and_dedup(stick):
    expert = build_expert_records([replay_gold(EpisodeConfig(), stick, run_id="r")])
    correct = build_correct_records([episode(stick, 1.0, mode="off")])
    # same bytes, same task: the expert copy wins
    assert correct[0].conversation_bytes() == expert[0].conversation_bytes()
    assert union_train(expert, correct) == expert
    other = agentic(2)
    assert union_train(expert, [*correct, *other, other[0]]) == [*expert, *other]
    assert dedup([*other, *other]) == other


@given(st.lists(st.integers(0, 5), max_size=30))
def test_dedup_property(ids):
    pool = agentic(6)
    recs = [pool[i] for i in ids]
    out = dedup(recs)
    assert len(out) == len(set(ids))
    assert [forge.dedup_key(r) for r in out] == list(dict.fromkeys(forge.dedup_key(r) for r in recs))


# -- mixing ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "beta, n, a",
    [("0", 10, 0), ("1", 10, 10), ("0.8", 10, 8), ("0.8", 1, 1), ("0.5", 1, 1), ("0.5", 3, 2), ("0.8", 100, 80), ("0.25", 2, 1), ("0.2", 2, 0)],
)
def test_agentic_count_hand_values(beta, n, a):
    assert agentic_count(Fraction(beta), n) == a


@given(st.fractions(0, 1), st.integers(0, 500))
def test_agentic_count_is_nearest(beta, n):
    a = agentic_count(beta, n)
    assert 0 <= a <= n and abs(a - beta * n) <= Fraction(1, 2)


def test_mix_exact_and_deterministic():
    mixed, a, g, capped = mix_records(agentic(50), general(50), Fraction(4, 5), 40, seed=3)
    assert (a, g, capped) == (32, 8, False)
    assert sum(r.pool == "correct" for r in mixed) == 32 and sum(r.pool == "general" for r in mixed) == 8
    again, *_ = mix_records(agentic(50), general(50), Fraction(4, 5), 40, seed=3)
    assert again == mixed
    other, *_ = mix_records(agentic(50), general(50), Fraction(4, 5), 40, seed=4)
    assert other != mixed


def test_mix_caps_when_short():
    mixed, a, g, capped = mix_records(agentic(8), general(100), Fraction(4, 5), 100, seed=0)
    assert capped and (a, g) == (8, 2)
    _, a, g, capped = mix_records(agentic(8), general(100), Fraction(4, 5), None, seed=0)
    assert (a, g, capped) == (8, 2, False)


def test_mix_empty_pools():
    with pytest.raises(EmptyPool):
        mix_records([], general(3), Fraction(1, 2), 2, 0)
    with pytest.raises(EmptyPool):
        mix_records(agentic(3), [], Fraction(1, 2), 2, 0)
    assert mix_records(agentic(3), [], Fraction(1), 2, 0)[1:] == (2, 0, False)
    assert mix_records([], general(3), Fraction(0), 2, 0)[1:] == (0, 2, False)


def test_mix_datasets_writes_manifest(tmp_path):
    forge.write_records(tmp_path / "a.json", agentic(20))
    forge.write_records(tmp_path / "g.json", general(20))
    out, manifest = forge.mix_datasets(
        MixSpec(Fraction(1, 2), (tmp_path / "a.json",), tmp_path / "g.json", 10, 1), tmp_path / "mixed.json", tmp_path / "manifest.json"
    )
    assert manifest["beta"] == "0.5" and manifest["mix"]["agentic"] == 5 and manifest["mix"]["general"] == 5
    assert manifest["files"]["mixed.json"]["records"] == 10
    assert manifest["counts"] == {"general": {"general": 20}, "unknown": {"correct": 20}}
    assert forge.verify_manifest(tmp_path / "manifest.json") == []
    (tmp_path / "mixed.json").write_text("[\n]\n")
    assert len(forge.verify_manifest(tmp_path / "manifest.json")) == 2


# -- files and schema --------------------------------------------------------------


def test_one_record_per_line(tmp_path):
    path = forge.write_records(tmp_path / "x.json", agentic(7))
    text = path.read_text()
    assert text.startswith("[\n") and text.endswith("]\n")
    assert forge.count_record_lines(path) == 7 == len(json.loads(text))
    assert load_records(path) == agentic(7)
    assert forge.count_record_lines(forge.write_records(tmp_path / "e.json", [])) == 0


def test_load_jsonl_and_default_pool(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text("\n".join(json.dumps({"conversations": [{"from": "human", "value": "h"}, {"from": "gpt", "value": "g"}]}) for _ in range(3)))
    recs = load_records(p)
    assert len(recs) == 3 and all(r.pool == "general" for r in recs)


@pytest.mark.parametrize(
    "obj",
    [
        [],
        {"conversations": []},
        {"conversations": [{"from": "human", "value": "x"}]},
        {"conversations": [{"from": "robot", "value": "x"}, {"from": "gpt", "value": "y"}]},
        {"conversations": [{"from": "human", "value": 3}, {"from": "gpt", "value": "y"}]},
        {"conversations": [{"from": "human", "value": "x", "extra": 1}, {"from": "gpt", "value": "y"}]},
        {"conversations": [{"from": "human", "value": "x"}, {"from": "gpt", "value": "y"}], "system": 5},
    ],
)
def test_schema_checker_rejects(obj):
    assert check_schema(obj)
    with pytest.raises((SchemaError, AttributeError, TypeError)):
        DatasetRecord.from_dict(obj)


def test_record_invariants():
    with pytest.raises(SchemaError):
        DatasetRecord((("gpt", "x"),))
    with pytest.raises(SchemaError):
        DatasetRecord((("human", "x"), ("human", "y"), ("gpt", "z")))
    with pytest.raises(SchemaError):
        DatasetRecord((("human", "x"), ("gpt", "y")), pool="correct")
    with pytest.raises(SchemaError):
        DatasetRecord((("human", "x"), ("gpt", "y")), pool="mystery")


def test_every_built_record_passes_checker(stick):
    h = harvest(1, [episode(stick, 0.3)])
    for rec in [*build_critique_records(h), *build_correct_records(h), *build_refine_records(h)]:
        assert check_schema(rec.to_dict()) == []
        assert DatasetRecord.from_dict(rec.to_dict()) == rec


def test_log_name_is_filesystem_safe():
    assert forge.log_name("a/b c") == "a_b_c.jsonl"
