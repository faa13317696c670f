from __future__ import annotations

import sys
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from cgiagent.critic import render_critique
from cgiagent.metrics import (
    MissingCandidates,
    MissingOracleLength,
    NoEpisodes,
    avg_final_score,
    build_report,
    cumulative_series,
    difficulty_buckets,
    dumps_report,
    load_logs,
    revision_counts,
    revision_ratio,
    stage_of,
    success_rate,
    write_report,
)
from cgiagent.orchestrator import EpisodeConfig, run_exploration
from cgiagent.policy import ActorConfig
from cgiagent.trajectory import (
    AgentAction,
    CandidateBuffer,
    EmptyTrajectory,
    Grade,
    Instruction,
    Observation,
    Step,
    Trajectory,
)

sys.path.insert(0, str(Path(__file__).parent / "oracles"))
import recount  # noqa: E402

CRIT = render_critique("c", "f", "e", Grade.GOOD, None)


def traj(task_id="t", revised=(), n=None, scores=None, critiques=True, oracle_length=None, aborted=False):
    """Synthetic trajectory; ``revised`` lists step indices whose refined action differs from candidate 0."""
    scores = list(scores) if scores is not None else [0.0] * (n or 1)
    steps = []
    for t, score in enumerate(scores):
        cands = (AgentAction.from_command("inventory"), AgentAction.from_command("get stone"))
        buf = CandidateBuffer(cands, (CRIT, CRIT) if critiques else ())
        action = cands[1] if t in revised else cands[0]
        steps.append(Step(t, buf, action, Observation("", score, t == len(scores) - 1 and score == 1.0)))
    return Trajectory(Instruction(task_id, "craftsim", "x", oracle_length=oracle_length), tuple(steps), aborted=aborted)


def ended(reward: float, task_id: str = "t") -> Trajectory:
    return traj(task_id, scores=[reward])


# -- scores ----------------------------------------------------------------------


def test_avg_final_score_examples():
    assert avg_final_score([ended(r) for r in (0.5, 1.0, 0.0, 0.5)]) == Fraction(1, 2)
    assert avg_final_score([ended(1.0)] * 3) == 1
    assert avg_final_score([ended(0.3)]) == Fraction(3, 10)


def test_success_rate_examples():
    assert success_rate([ended(r) for r in (1.0, 0.0, 1.0, 1.0)]) == Fraction(3, 4)
    assert success_rate([ended(0.99)]) == 0
    with pytest.raises(NoEpisodes):
        success_rate([traj(aborted=True)])
    with pytest.raises(NoEpisodes):
        avg_final_score([])


def test_aborted_excluded():
    assert success_rate([ended(1.0), traj(scores=[0.0], aborted=True)]) == 1


# -- revision ratio --------------------------------------------------------------


def test_stage_mapping_examples():
    assert [stage_of(t, 5) for t in range(5)] == [1, 2, 3, 4, 5]
    assert [stage_of(t, 10) for t in range(10)] == [1, 1, 2, 2, 3, 3, 4, 4, 5, 5]
    assert [stage_of(t, 3) for t in range(3)] == [2, 4, 5]
    assert stage_of(0, 1) == 5


def test_revision_ratio_examples():
    assert revision_ratio([traj(revised=(0, 2), n=5)]) == [1, 0, 1, 0, 0]
    assert revision_ratio([traj(n=7)]) == [0] * 5
    assert revision_ratio([traj(n=1)]) == [None, None, None, None, 0]
    with pytest.raises(MissingCandidates):
        revision_ratio([traj(n=2, critiques=False)])


@given(st.lists(st.tuples(st.integers(1, 30), st.sets(st.integers(0, 29))), min_size=1, max_size=8))
def test_stage_partition_property(specs):
    trajs = [traj(revised=rev, n=n) for n, rev in specs]
    counts = revision_counts(trajs)
    assert sum(n for _, n in counts) == sum(n for n, _ in specs)
    assert sum(r for r, _ in counts) == sum(len({i for i in rev if i < n}) for n, rev in specs)


# -- buckets and series ------------------------------------------------------------


def test_bucket_examples():
    tasks = [Instruction(f"t{i}", "craftsim", "x", oracle_length=L) for i, L in enumerate((2, 2, 5, 5, 9, 9))]
    trajs = [traj(f"t{i}", scores=[float(i % 2)]) for i in range(6)]
    buckets = difficulty_buckets(tasks, trajs)
    assert [b.tasks for b in buckets] == [2, 2, 2]
    assert [b.avg_score for b in buckets] == [Fraction(1, 2)] * 3
    same = [Instruction(f"t{i}", "craftsim", "x", oracle_length=4) for i in range(4)]
    assert [b.tasks for b in difficulty_buckets(same, [])] == [4, 0, 0]
    with pytest.raises(MissingOracleLength):
        difficulty_buckets([Instruction("u", "craftsim", "x")], [])


def test_series_examples():
    s = cumulative_series(traj(scores=[0, 0, 0, 0, 1.0]))
    assert s == [(0, 0.0), (1, 0.0), (2, 0.0), (3, 0.0), (4, 1.0)]
    assert cumulative_series(traj(scores=[0.0] * 6)) == [(t, 0.0) for t in range(6)]
    with pytest.raises(EmptyTrajectory):
        cumulative_series(Trajectory(Instruction("e", "craftsim", "x")))


# -- pinned run vs the independent recount -----------------------------------------


@pytest.fixture(scope="module")
def pinned_run(tmp_path_factory, depth3_tasks):
    out = tmp_path_factory.mktemp("pinned")
    cfg = EpisodeConfig(actor=ActorConfig(fidelity=0.3), critic_noise=0.2, seed=7)
    run_exploration(1, depth3_tasks, cfg, run_dir=out, run_id="pinned")
    return sorted((out / "round_1" / "trajectories").glob("*.jsonl"))


def test_revision_ratio_matches_recount(pinned_run):
    assert len(pinned_run) == 20
    trajs, corrupt = load_logs(pinned_run)
    assert corrupt == 0
    expected = recount.recount_revisions([str(p) for p in pinned_run])
    assert revision_counts(trajs) == expected
    assert revision_ratio(trajs) == [Fraction(r, n) if n else None for r, n in expected]
    assert any(r for r, _ in expected)


def test_buckets_match_recount(pinned_run):
    trajs, _ = load_logs(pinned_run)
    ours = difficulty_buckets([t.instruction for t in trajs], trajs)
    assert [(b.tasks, b.episodes, b.avg_score) for b in ours] == recount.recount_buckets([str(p) for p in pinned_run])


def test_craftsim_identities(pinned_run):
    trajs, _ = load_logs(pinned_run)
    assert avg_final_score(trajs) == success_rate(trajs)
    for t in trajs:
        ys = [y for _, y in cumulative_series(t)]
        assert ys == sorted(ys)


def test_report_reproducible(pinned_run, tmp_path):
    a = dumps_report(build_report(load_logs(pinned_run)[0]))
    b = dumps_report(build_report(load_logs(list(reversed(pinned_run)))[0]))
    assert a == b
    path = write_report(build_report(load_logs(pinned_run)[0]), tmp_path)
    assert path.read_text() == a
    figs = tmp_path / "figures"
    assert (figs / "revision_ratio.csv").read_text().startswith("stage,ratio\n")
    assert (figs / "difficulty.csv").read_text().startswith("bucket,avg_score,n\n")
    assert (figs / "series.csv").read_text().startswith("step,score,task_id\n")
    svg = (figs / "revision_ratio.svg").read_bytes()
    write_report(build_report(load_logs(pinned_run)[0]), tmp_path)
    assert (figs / "revision_ratio.svg").read_bytes() == svg


def test_corrupt_logs_counted(pinned_run, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    trajs, corrupt = load_logs([*pinned_run, bad])
    assert corrupt == 1 and len(trajs) == 20
    report = build_report(trajs, corrupt)
    assert report["corrupt"] == 1 and report["overall"]["n_episodes"] == 20
