"""Shared data model: instructions, actions, observations, critiques and trajectories.

Every value here is an immutable dataclass. Trajectories grow only through
:func:`append_step`, which returns an extended copy.

Trajectory logs are newline-delimited JSON::

    {"task_id", "env_id", "seed", "round", ...}          header
    {"t", "candidates", "critiques", "action", ...}      one line per step
    {"final_reward"}                                     footer
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Any, Iterable, Sequence


class TrajectoryError(Exception):
    pass


class AppendAfterDone(TrajectoryError):
    pass


class IndexGap(TrajectoryError):
    pass


class StepLimitExceeded(TrajectoryError):
    pass


class OutOfRange(TrajectoryError):
    pass


class EmptyTrajectory(TrajectoryError):
    pass


class LogFormatError(TrajectoryError):
    pass


class Grade(enum.IntEnum):
    """Five-level critique grade. Integer order matches quality order."""

    VERY_POOR = 0
    POOR = 1
    NEUTRAL = 2
    GOOD = 3
    EXCELLENT = 4

    @property
    def label(self) -> str:
        return _GRADE_LABELS[self]

    @classmethod
    def from_label(cls, text: str) -> "Grade":
        key = " ".join(text.replace("_", " ").split()).lower()
        if key == "verypoor":
            key = "very poor"
        for grade, label in _GRADE_LABELS.items():
            if label.lower() == key:
                return grade
        raise ValueError(f"unknown grade {text!r}")


_GRADE_LABELS = {
    Grade.EXCELLENT: "Excellent",
    Grade.GOOD: "Good",
    Grade.NEUTRAL: "Neutral",
    Grade.POOR: "Poor",
    Grade.VERY_POOR: "Very Poor",
}


@dataclass(frozen=True)
class Instruction:
    task_id: str
    env_id: str
    text: str
    gold_path: tuple[str, ...] | None = None
    oracle_length: int | None = None

    def __post_init__(self) -> None:
        if not self.task_id:
            raise ValueError("task_id must be nonempty")
        if self.gold_path is not None:
            object.__setattr__(self, "gold_path", tuple(self.gold_path))
            if self.oracle_length is None:
                object.__setattr__(self, "oracle_length", len(self.gold_path))
            elif self.oracle_length != len(self.gold_path):
                raise ValueError("oracle_length must equal len(gold_path)")
        if self.oracle_length is not None and self.oracle_length < 1:
            raise ValueError("oracle_length must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "env_id": self.env_id,
            "text": self.text,
            "gold_path": list(self.gold_path) if self.gold_path is not None else None,
            "oracle_length": self.oracle_length,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Instruction":
        gold = data.get("gold_path")
        return cls(
            task_id=data["task_id"],
            env_id=data["env_id"],
            text=data["text"],
            gold_path=tuple(gold) if gold is not None else None,
            oracle_length=data.get("oracle_length"),
        )


@dataclass(frozen=True)
class AgentAction:
    thought: str
    command: str
    raw: str

    def __post_init__(self) -> None:
        if not self.command:
            raise ValueError("command must be nonempty")

    @classmethod
    def from_command(cls, command: str, thought: str = "") -> "AgentAction":
        return cls(thought=thought, command=command, raw=f"Thought: {thought}\nAction: {command}")

    def to_dict(self) -> dict[str, str]:
        return {"thought": self.thought, "command": self.command, "raw": self.raw}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AgentAction":
        return cls(thought=data["thought"], command=data["command"], raw=data["raw"])


@dataclass(frozen=True)
class Observation:
    text: str
    score: float
    done: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class Critique:
    """Structured critique of one candidate action.

    ``grade`` is None only for remote critiques whose text had no parseable
    grade; those are kept in logs but never become training records.
    """

    contribution: str
    feasibility: str
    efficiency: str
    grade: Grade | None
    suggested_revision: str | None
    raw: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "contribution": self.contribution,
            "feasibility": self.feasibility,
            "efficiency": self.efficiency,
            "grade": self.grade.label if self.grade is not None else None,
            "suggested_revision": self.suggested_revision,
            "raw": self.raw,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Critique":
        grade = data.get("grade")
        return cls(
            contribution=data["contribution"],
            feasibility=data["feasibility"],
            efficiency=data["efficiency"],
            grade=Grade.from_label(grade) if grade is not None else None,
            suggested_revision=data.get("suggested_revision"),
            raw=data["raw"],
        )


@dataclass(frozen=True)
class CandidateBuffer:
    candidates: tuple[AgentAction, ...]
    critiques: tuple[Critique, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "critiques", tuple(self.critiques))
        if not self.candidates:
            raise ValueError("candidate buffer must hold at least one candidate")
        if self.critiques and len(self.critiques) != len(self.candidates):
            raise ValueError("critiques must parallel candidates")

    def with_critiques(self, critiques: Sequence[Critique]) -> "CandidateBuffer":
        return CandidateBuffer(self.candidates, tuple(critiques))


@dataclass(frozen=True)
class Step:
    index: int
    candidates: CandidateBuffer
    refined_action: AgentAction
    observation: Observation


@dataclass(frozen=True)
class Trajectory:
    instruction: Instruction
    steps: tuple[Step, ...] = ()
    seed: int = 0
    round: int = 0
    max_steps: int | None = None
    run_id: str = ""
    aborted: bool = False
    error: str | None = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def done(self) -> bool:
        return bool(self.steps) and self.steps[-1].observation.done

    @property
    def final_reward(self) -> float:
        return final_reward(self)

    @property
    def task_id(self) -> str:
        return self.instruction.task_id


def append_step(traj: Trajectory, step: Step) -> Trajectory:
    if traj.done:
        raise AppendAfterDone(f"trajectory {traj.task_id} already terminated")
    if step.index != len(traj.steps):
        raise IndexGap(f"expected step index {len(traj.steps)}, got {step.index}")
    if traj.max_steps is not None and len(traj.steps) >= traj.max_steps:
        raise StepLimitExceeded(f"trajectory {traj.task_id} reached {traj.max_steps} steps")
    return replace(traj, steps=traj.steps + (step,))


def render_history(traj: Trajectory, upto: int | None = None) -> str:
    """Instruction text followed by refined actions and observations, in order.

    Only refined actions enter the history; unchosen candidates do not.
    """
    if upto is None:
        upto = len(traj.steps)
    if upto < 0 or upto > len(traj.steps):
        raise OutOfRange(f"upto={upto} outside [0, {len(traj.steps)}]")
    parts = [traj.instruction.text]
    for step in traj.steps[:upto]:
        parts.append(step.refined_action.raw)
        parts.append(step.observation.text)
    return "\n".join(parts)


def final_reward(traj: Trajectory) -> float:
    if not traj.steps:
        raise EmptyTrajectory(f"trajectory {traj.task_id} has no steps")
    return traj.steps[-1].observation.score


def executed_commands(traj: Trajectory) -> tuple[str, ...]:
    return tuple(step.refined_action.command for step in traj.steps)


# -- log serialization -------------------------------------------------------


def _dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def header_line(traj: Trajectory) -> str:
    instr = traj.instruction
    return _dumps(
        {
            "task_id": instr.task_id,
            "env_id": instr.env_id,
            "seed": traj.seed,
            "round": traj.round,
            "run_id": traj.run_id,
            "max_steps": traj.max_steps,
            "instruction": instr.text,
            "gold_path": list(instr.gold_path) if instr.gold_path is not None else None,
            "oracle_length": instr.oracle_length,
        }
    )


def step_line(step: Step) -> str:
    return _dumps(
        {
            "t": step.index,
            "candidates": [c.to_dict() for c in step.candidates.candidates],
            "critiques": [c.to_dict() for c in step.candidates.critiques],
            "action": step.refined_action.to_dict(),
            "observation": step.observation.text,
            "score": float(step.observation.score),
            "done": step.observation.done,
        }
    )


def footer_line(traj: Trajectory) -> str:
    if traj.aborted:
        return _dumps({"final_reward": None, "aborted": True, "error": traj.error})
    return _dumps({"final_reward": float(final_reward(traj)) if traj.steps else None})


def dumps_trajectory(traj: Trajectory) -> str:
    lines = [header_line(traj)]
    lines.extend(step_line(s) for s in traj.steps)
    lines.append(footer_line(traj))
    return "\n".join(lines) + "\n"


def loads_trajectory(text: str) -> Trajectory:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise LogFormatError("log needs at least a header and a footer line")
    try:
        records = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"invalid JSON line: {exc}") from exc
    head, *body, foot = records
    if not isinstance(foot, dict) or "final_reward" not in foot:
        raise LogFormatError("missing final_reward footer")
    try:
        instr = Instruction(
            task_id=head["task_id"],
            env_id=head["env_id"],
            text=head.get("instruction", ""),
            gold_path=tuple(head["gold_path"]) if head.get("gold_path") is not None else None,
            oracle_length=head.get("oracle_length"),
        )
        steps = tuple(_step_from_dict(d) for d in body)
    except (KeyError, TypeError, ValueError) as exc:
        raise LogFormatError(f"malformed record: {exc}") from exc
    for i, step in enumerate(steps):
        if step.index != i:
            raise LogFormatError(f"step index {step.index} at position {i}")
    traj = Trajectory(
        instruction=instr,
        steps=steps,
        seed=head["seed"],
        round=head["round"],
        max_steps=head.get("max_steps"),
        run_id=head.get("run_id", ""),
        aborted=bool(foot.get("aborted", False)),
        error=foot.get("error"),
    )
    if not traj.aborted and steps and foot["final_reward"] != steps[-1].observation.score:
        raise LogFormatError("footer final_reward disagrees with last observation")
    return traj


def _step_from_dict(d: dict[str, Any]) -> Step:
    buffer = CandidateBuffer(
        candidates=tuple(AgentAction.from_dict(c) for c in d["candidates"]),
        critiques=tuple(Critique.from_dict(c) for c in d["critiques"]),
    )
    return Step(
        index=d["t"],
        candidates=buffer,
        refined_action=AgentAction.from_dict(d["action"]),
        observation=Observation(text=d["observation"], score=float(d["score"]), done=bool(d["done"])),
    )


def read_trajectory(path: str | Path) -> Trajectory:
    return loads_trajectory(Path(path).read_text(encoding="utf-8"))


@dataclass
class TrajectoryLogWriter:
    """Append-only log writer; each line is flushed as soon as it is written."""

    path: Path
    _fh: IO[str] | None = field(default=None, init=False, repr=False)

    def open(self, traj: Trajectory) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._write(header_line(traj))

    def step(self, step: Step) -> None:
        self._write(step_line(step))

    def close(self, traj: Trajectory) -> None:
        self._write(footer_line(traj))
        assert self._fh is not None
        self._fh.close()
        self._fh = None

    def _write(self, line: str) -> None:
        assert self._fh is not None, "writer not opened"
        self._fh.write(line + "\n")
        self._fh.flush()


def iter_logs(directory: str | Path) -> Iterable[Path]:
    return sorted(Path(directory).glob("*.jsonl"))
