"""Evaluation quantities over trajectory logs.

All ratios are computed as exact fractions; reports serialize them as floats
next to the integer counts they came from.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

from .craftsim.commands import canonical
from .trajectory import EmptyTrajectory, Instruction, LogFormatError, Trajectory, loads_trajectory

STAGES = 5


class NoEpisodes(ValueError):
    pass


class MissingCandidates(ValueError):
    pass


class MissingOracleLength(ValueError):
    pass


def _exact(x: float) -> Fraction:
    return Fraction(str(x))


def _finished(trajs: Iterable[Trajectory]) -> list[Trajectory]:
    done = [t for t in trajs if not t.aborted and t.steps]
    if not done:
        raise NoEpisodes("no completed episodes")
    return done


def avg_final_score(trajs: Iterable[Trajectory]) -> Fraction:
    done = _finished(trajs)
    return sum((_exact(t.final_reward) for t in done), Fraction(0)) / len(done)


def success_rate(trajs: Iterable[Trajectory]) -> Fraction:
    done = _finished(trajs)
    return Fraction(sum(1 for t in done if t.final_reward == 1.0), len(done))


def stage_of(t: int, length: int) -> int:
    """1-based stage of step ``t`` in a trajectory of ``length`` steps."""
    return min(STAGES, max(1, math.ceil(Fraction(STAGES * (t + 1), length))))


def revision_counts(trajs: Iterable[Trajectory]) -> list[tuple[int, int]]:
    """Per stage, (revised steps, total steps), pooled over trajectories."""
    revised = [0] * STAGES
    total = [0] * STAGES
    for traj in trajs:
        if traj.aborted:
            continue
        for step in traj.steps:
            if not step.candidates.critiques:
                raise MissingCandidates(f"{traj.task_id} step {step.index} was not critiqued")
            s = stage_of(step.index, len(traj.steps)) - 1
            total[s] += 1
            if canonical(step.refined_action.command) != canonical(step.candidates.candidates[0].command):
                revised[s] += 1
    return list(zip(revised, total))


def revision_ratio(trajs: Iterable[Trajectory]) -> list[Fraction | None]:
    return [Fraction(r, n) if n else None for r, n in revision_counts(trajs)]


def tercile_cuts(lengths: Sequence[int]) -> tuple[int, int]:
    xs = sorted(lengths)
    n = len(xs)
    return xs[math.ceil(n / 3) - 1], xs[math.ceil(2 * n / 3) - 1]


def bucket_of(length: int, cuts: tuple[int, int]) -> int:
    q1, q2 = cuts
    return 1 if length <= q1 else 2 if length <= q2 else 3


@dataclass(frozen=True)
class Bucket:
    bucket: int
    tasks: int
    episodes: int
    avg_score: Fraction | None


def difficulty_buckets(tasks: Sequence[Instruction], trajs: Iterable[Trajectory]) -> list[Bucket]:
    """Split tasks by oracle-length terciles (ties fall to the lower bucket)."""
    lengths = {}
    for task in tasks:
        if task.oracle_length is None:
            raise MissingOracleLength(task.task_id)
        lengths[task.task_id] = task.oracle_length
    if not lengths:
        return [Bucket(b, 0, 0, None) for b in (1, 2, 3)]
    cuts = tercile_cuts(list(lengths.values()))
    members = defaultdict(int)
    for length in lengths.values():
        members[bucket_of(length, cuts)] += 1
    scores = defaultdict(list)
    for traj in trajs:
        if traj.aborted or not traj.steps or traj.task_id not in lengths:
            continue
        scores[bucket_of(lengths[traj.task_id], cuts)].append(_exact(traj.final_reward))
    return [
        Bucket(b, members[b], len(scores[b]), sum(scores[b], Fraction(0)) / len(scores[b]) if scores[b] else None)
        for b in (1, 2, 3)
    ]


def cumulative_series(traj: Trajectory) -> list[tuple[int, float]]:
    if not traj.steps:
        raise EmptyTrajectory(f"trajectory {traj.task_id} has no steps")
    return [(s.index, s.observation.score) for s in traj.steps]


# -- reports -------------------------------------------------------------------


def _f(x: Fraction | None) -> float | None:
    return None if x is None else round(float(x), 6)


def _sort_key(t: Trajectory) -> tuple[str, int, str]:
    return (t.run_id, t.round, t.task_id)


def _summary(trajs: list[Trajectory]) -> dict[str, Any]:
    done = [t for t in trajs if not t.aborted and t.steps]
    out: dict[str, Any] = {
        "n_episodes": len(done),
        "abort_count": sum(t.aborted for t in trajs),
        "avg_final_score": _f(avg_final_score(done)) if done else None,
        "success_rate": _f(success_rate(done)) if done else None,
        "successes": sum(1 for t in done if t.final_reward == 1.0),
    }
    try:
        counts = revision_counts(done)
        out["revision_ratio_by_stage"] = [_f(Fraction(r, n)) if n else None for r, n in counts]
        out["revision_counts_by_stage"] = [list(c) for c in counts]
    except MissingCandidates:
        out["revision_ratio_by_stage"] = None
        out["revision_counts_by_stage"] = None
    tasks = {t.task_id: t.instruction for t in trajs}
    try:
        buckets = difficulty_buckets([tasks[k] for k in sorted(tasks)], done)
        out["difficulty_buckets"] = [
            {"bucket": b.bucket, "tasks": b.tasks, "episodes": b.episodes, "avg_score": _f(b.avg_score)} for b in buckets
        ]
    except MissingOracleLength:
        out["difficulty_buckets"] = None
    return out


def build_report(trajs: Iterable[Trajectory], corrupt: int = 0) -> dict[str, Any]:
    """Aggregate report: overall, per environment, and per run."""
    trajs = sorted(trajs, key=_sort_key)
    by_env: dict[str, list[Trajectory]] = defaultdict(list)
    by_run: dict[str, list[Trajectory]] = defaultdict(list)
    for t in trajs:
        by_env[t.instruction.env_id].append(t)
        by_run[t.run_id].append(t)
    return {
        "overall": _summary(trajs),
        "by_env": {env: _summary(ts) for env, ts in sorted(by_env.items())},
        "runs": {run: _summary(ts) for run, ts in sorted(by_run.items())},
        "corrupt": corrupt,
        "series": [
            {"run_id": t.run_id, "round": t.round, "task_id": t.task_id, "series": [list(p) for p in cumulative_series(t)]}
            for t in trajs
            if not t.aborted and t.steps
        ],
    }


def dumps_report(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def load_logs(paths: Iterable[Path]) -> tuple[list[Trajectory], int]:
    """Parse logs, skipping (and counting) unreadable ones."""
    trajs, corrupt = [], 0
    for path in paths:
        try:
            trajs.append(loads_trajectory(Path(path).read_text(encoding="utf-8")))
        except (LogFormatError, UnicodeDecodeError, ValueError, KeyError, TypeError):
            corrupt += 1
    return trajs, corrupt


def run_logs(run_dir: str | Path) -> list[Path]:
    """Episode logs of a run directory; the round-0 gold replays are not policy episodes."""
    run_dir = Path(run_dir)
    paths = [
        p
        for p in sorted(run_dir.glob("round_*/trajectories/*.jsonl"))
        if p.parent.parent.name != "round_0"
    ]
    return paths + sorted(run_dir.glob("trajectories/*.jsonl"))


def _csv(rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def write_report(report: dict[str, Any], out_dir: str | Path, figures: bool = True) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(dumps_report(report), encoding="utf-8")
    if figures:
        write_figures(report, out_dir / "figures")
    return path


def write_figures(report: dict[str, Any], fig_dir: Path) -> None:
    fig_dir.mkdir(parents=True, exist_ok=True)
    overall = report["overall"]
    ratios = overall["revision_ratio_by_stage"] or [None] * STAGES
    stage_rows = [("stage", "ratio")] + [(i + 1, "" if r is None else r) for i, r in enumerate(ratios)]
    buckets = overall["difficulty_buckets"] or []
    bucket_rows = [("bucket", "avg_score", "n")] + [
        (b["bucket"], "" if b["avg_score"] is None else b["avg_score"], b["episodes"]) for b in buckets
    ]
    series_rows = [("step", "score", "task_id")] + [
        (t, s, entry["task_id"]) for entry in report["series"] for t, s in entry["series"]
    ]
    (fig_dir / "revision_ratio.csv").write_text(_csv(stage_rows), encoding="utf-8")
    (fig_dir / "difficulty.csv").write_text(_csv(bucket_rows), encoding="utf-8")
    (fig_dir / "series.csv").write_text(_csv(series_rows), encoding="utf-8")
    _plots(report, ratios, buckets, fig_dir)


def _plots(report: dict[str, Any], ratios: list, buckets: list, fig_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "cgiagent"
    meta = {"Date": None}

    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(range(1, STAGES + 1), [r or 0.0 for r in ratios])
    ax.set_xlabel("trajectory stage")
    ax.set_ylabel("revision ratio")
    ax.set_ylim(0, 1)
    fig.savefig(fig_dir / "revision_ratio.svg", format="svg", metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar([b["bucket"] for b in buckets], [b["avg_score"] or 0.0 for b in buckets])
    ax.set_xlabel("difficulty bucket")
    ax.set_ylabel("average final score")
    ax.set_ylim(0, 1)
    fig.savefig(fig_dir / "difficulty.svg", format="svg", metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3))
    for entry in report["series"]:
        xs, ys = zip(*entry["series"])
        ax.step(xs, ys, where="post", linewidth=0.8, alpha=0.6)
    ax.set_xlabel("step")
    ax.set_ylabel("score")
    ax.set_ylim(-0.05, 1.05)
    fig.savefig(fig_dir / "series.svg", format="svg", metadata=meta)
    plt.close(fig)
