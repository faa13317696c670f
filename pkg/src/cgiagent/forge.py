"""Training-corpus builders, the beta-weighted mix, and manifests.

Files are JSON arrays written one record per line so that line counts equal
record counts::

    [
    {"conversations": [...], "system": "...", "pool": "correct", "provenance": {...}},
    {"conversations": [...], "system": "...", "pool": "correct", "provenance": {...}}
    ]
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

from .craftsim.commands import canonical
from .critic import CritiqueRequest, render_critique_prompt
from .policy.actors import render_refine_turn
from .policy.prompts import system_prompt
from .trajectory import Trajectory, executed_commands, render_history

log = logging.getLogger(__name__)

POOLS = ("critique", "correct", "refine", "general", "expert")
AGENTIC_POOLS = ("correct", "refine", "expert")


class RewardFilterViolation(ValueError):
    pass


class MissingCritiques(ValueError):
    pass


class EmptyPool(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Provenance:
    run_id: str
    round: int
    task_id: str
    t: int | None = None
    env_id: str = ""
    candidate: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "round": self.round,
            "task_id": self.task_id,
            "t": self.t,
            "env_id": self.env_id,
            "candidate": self.candidate,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Provenance":
        return cls(d["run_id"], d["round"], d["task_id"], d.get("t"), d.get("env_id", ""), d.get("candidate"))


@dataclass(frozen=True)
class DatasetRecord:
    conversations: tuple[tuple[str, str], ...]  # (from, value), from in {"human", "gpt"}
    system: str = ""
    pool: str = "general"
    provenance: Provenance | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "conversations", tuple((r, v) for r, v in self.conversations))
        if not self.conversations:
            raise SchemaError("conversations must be nonempty")
        for i, (role, _) in enumerate(self.conversations):
            expected = "human" if i % 2 == 0 else "gpt"
            if role != expected:
                raise SchemaError(f"turn {i} has role {role!r}, expected {expected!r}")
        if self.conversations[-1][0] != "gpt":
            raise SchemaError("last turn must come from gpt")
        if self.pool not in POOLS:
            raise SchemaError(f"unknown pool {self.pool!r}")
        if self.pool != "general" and self.provenance is None:
            raise SchemaError(f"{self.pool} record needs provenance")

    @property
    def task_id(self) -> str | None:
        return self.provenance.task_id if self.provenance else None

    def conversation_bytes(self) -> bytes:
        body = {"conversations": [{"from": r, "value": v} for r, v in self.conversations], "system": self.system}
        return json.dumps(body, ensure_ascii=False, sort_keys=True).encode("utf-8")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "conversations": [{"from": r, "value": v} for r, v in self.conversations],
            "system": self.system,
            "pool": self.pool,
        }
        if self.provenance is not None:
            out["provenance"] = self.provenance.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any], default_pool: str = "general") -> "DatasetRecord":
        errors = check_schema(d)
        if errors:
            raise SchemaError("; ".join(errors))
        prov = d.get("provenance")
        return cls(
            conversations=tuple((t["from"], t["value"]) for t in d["conversations"]),
            system=d.get("system", ""),
            pool=d.get("pool", default_pool),
            provenance=Provenance.from_dict(prov) if prov else None,
        )


def check_schema(obj: Any) -> list[str]:
    """Independent structural check of one ShareGPT-style record; returns problems found."""
    if not isinstance(obj, dict):
        return ["record is not an object"]
    problems = []
    convs = obj.get("conversations")
    if not isinstance(convs, list) or not convs:
        problems.append("conversations must be a nonempty list")
        convs = []
    for i, turn in enumerate(convs):
        if not isinstance(turn, dict) or set(turn) != {"from", "value"}:
            problems.append(f"turn {i} must have exactly 'from' and 'value'")
            continue
        if turn["from"] not in ("human", "gpt"):
            problems.append(f"turn {i} has unknown speaker {turn['from']!r}")
        if not isinstance(turn["value"], str):
            problems.append(f"turn {i} value is not a string")
    if convs and isinstance(convs[-1], dict) and convs[-1].get("from") != "gpt":
        problems.append("last turn must come from gpt")
    if not isinstance(obj.get("system", ""), str):
        problems.append("system must be a string")
    return problems


# -- builders ------------------------------------------------------------------


def _sources(harvest_or_trajs) -> list[Trajectory]:
    trajs = list(getattr(harvest_or_trajs, "d_correct", harvest_or_trajs))
    for traj in trajs:
        if traj.aborted or not traj.steps or traj.final_reward != 1.0:
            raise RewardFilterViolation(f"trajectory {traj.task_id} (round {traj.round}) does not have reward 1")
    return trajs


def _prov(traj: Trajectory, t: int | None = None, candidate: int | None = None) -> Provenance:
    return Provenance(traj.run_id, traj.round, traj.task_id, t, traj.instruction.env_id, candidate)


def build_critique_records(harvest) -> list[DatasetRecord]:
    """One record per graded (candidate, critique). Inputs use the plain prompt, never the gold path."""
    records = []
    for traj in _sources(harvest):
        env_id = traj.instruction.env_id
        executed = executed_commands(traj)
        for step in traj.steps:
            history = render_history(traj, step.index)
            for i, (cand, crit) in enumerate(zip(step.candidates.candidates, step.candidates.critiques)):
                if crit.grade is None:
                    continue
                req = CritiqueRequest(env_id, history, cand, executed=executed[: step.index])
                (turn,) = render_critique_prompt(req, expert=False)
                records.append(
                    DatasetRecord((("human", turn.content), ("gpt", crit.raw)), "", "critique", _prov(traj, step.index, i))
                )
    return records


def episode_conversation(traj: Trajectory) -> tuple[tuple[str, str], ...]:
    turns = [("human", traj.instruction.text)]
    for j, step in enumerate(traj.steps):
        if j:
            turns.append(("human", traj.steps[j - 1].observation.text))
        turns.append(("gpt", step.refined_action.raw))
    return tuple(turns)


def _episode_records(harvest, pool: str) -> list[DatasetRecord]:
    return [
        DatasetRecord(episode_conversation(traj), system_prompt(traj.instruction.env_id), pool, _prov(traj))
        for traj in _sources(harvest)
    ]


def build_correct_records(harvest) -> list[DatasetRecord]:
    """Whole successful episodes without critiques, one record each."""
    return _episode_records(harvest, "correct")


def build_expert_records(gold_trajectories) -> list[DatasetRecord]:
    return _episode_records(gold_trajectories, "expert")


def is_revised(step) -> bool:
    return canonical(step.refined_action.command) != canonical(step.candidates.candidates[0].command)


def build_refine_records(harvest, only_revised: bool = False) -> list[DatasetRecord]:
    """One record per step: history, all candidates with critiques, then the refined action."""
    records = []
    for traj in _sources(harvest):
        for step in traj.steps:
            if not step.candidates.critiques:
                raise MissingCritiques(f"{traj.task_id} step {step.index} has no critiques")
            if only_revised and not is_revised(step):
                continue
            human = render_history(traj, step.index) + "\n\n" + render_refine_turn(step.candidates)
            records.append(
                DatasetRecord(
                    (("human", human), ("gpt", step.refined_action.raw)),
                    system_prompt(traj.instruction.env_id),
                    "refine",
                    _prov(traj, step.index),
                )
            )
    return records


def dedup_key(record: DatasetRecord) -> tuple[str | None, bytes]:
    return (record.task_id, record.conversation_bytes())


def union_train(expert: Sequence[DatasetRecord], correct: Sequence[DatasetRecord]) -> list[DatasetRecord]:
    """Expert first, then unseen correct records; the expert copy wins on collision."""
    return dedup([*expert, *correct])


def dedup(records: Iterable[DatasetRecord]) -> list[DatasetRecord]:
    seen: set[tuple[str | None, bytes]] = set()
    out = []
    for rec in records:
        key = dedup_key(rec)
        if key not in seen:
            seen.add(key)
            out.append(rec)
    return out


# -- files ---------------------------------------------------------------------


def dumps_records(records: Iterable[DatasetRecord | dict[str, Any]]) -> str:
    lines = [
        json.dumps(r.to_dict() if isinstance(r, DatasetRecord) else r, ensure_ascii=False, sort_keys=True)
        for r in records
    ]
    return "[\n" + ",\n".join(lines) + ("\n" if lines else "") + "]\n"


def write_records(path: str | Path, records: Iterable[DatasetRecord | dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_records(records), encoding="utf-8")
    return path


def load_records(path: str | Path, default_pool: str = "general") -> list[DatasetRecord]:
    """Read a JSON array (any layout) or JSON-lines file of records."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
    if isinstance(data, dict):
        data = [data]
    return [DatasetRecord.from_dict(d, default_pool) for d in data]


def count_record_lines(path: str | Path) -> int:
    return sum(1 for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.startswith("{"))


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- mixing --------------------------------------------------------------------


@dataclass(frozen=True)
class MixSpec:
    beta: Fraction
    agentic: tuple[Path, ...] = ()
    general: Path | None = None
    total: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        beta = self.beta if isinstance(self.beta, Fraction) else Fraction(str(self.beta))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "agentic", tuple(Path(p) for p in self.agentic))
        if self.general is not None:
            object.__setattr__(self, "general", Path(self.general))
        if not 0 <= beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if self.total is not None and self.total < 0:
            raise ValueError("total must be nonnegative")


def agentic_count(beta: Fraction, n: int) -> int:
    """round(beta * n), halves rounded up."""
    return math.floor(Fraction(beta) * n + Fraction(1, 2))


def max_total(beta: Fraction, n_agentic: int, n_general: int) -> int:
    for n in range(n_agentic + n_general, -1, -1):
        a = agentic_count(beta, n)
        if a <= n_agentic and n - a <= n_general:
            return n
    return 0


@dataclass
class MixResult:
    path: Path
    records: list[DatasetRecord]
    agentic: int
    general: int
    capped: bool = False
    warnings: list[str] = field(default_factory=list)


def mix_records(
    agentic: Sequence[DatasetRecord],
    general: Sequence[DatasetRecord],
    beta: Fraction,
    total: int | None,
    seed: int,
) -> tuple[list[DatasetRecord], int, int, bool]:
    beta = Fraction(beta)
    if beta > 0 and not agentic:
        raise EmptyPool("agentic pool is empty but beta > 0")
    if beta < 1 and not general:
        raise EmptyPool("general pool is empty but beta < 1")
    supply = max_total(beta, len(agentic), len(general))
    n = supply if total is None else total
    capped = False
    if n > supply:
        log.warning("requested %d records but supply under beta=%s allows %d; capping", n, beta, supply)
        n, capped = supply, True
    a = agentic_count(beta, n)
    rng = random.Random(seed)
    mixed = rng.sample(list(agentic), a) + rng.sample(list(general), n - a)
    rng.shuffle(mixed)
    return mixed, a, n - a, capped


def mix_datasets(spec: MixSpec, out: str | Path, manifest_path: str | Path | None = None, round: int = 0) -> tuple[Path, dict[str, Any]]:
    for p in spec.agentic:
        if not p.exists():
            raise FileNotFoundError(p)
    agentic = [r for p in spec.agentic for r in load_records(p, default_pool="correct")]
    general: list[DatasetRecord] = []
    if spec.general is not None and spec.beta < 1:
        general = load_records(spec.general, default_pool="general")
    mixed, a, g, capped = mix_records(agentic, general, spec.beta, spec.total, spec.seed)
    out = write_records(out, mixed)
    files = [*spec.agentic, out]
    if general:
        files.insert(len(spec.agentic), spec.general)
    manifest = build_manifest(round, spec.beta, files, mix={"agentic": a, "general": g, "total": a + g, "seed": spec.seed, "capped": capped})
    if manifest_path is not None:
        write_manifest(manifest_path, manifest)
    return out, manifest


# -- manifests -----------------------------------------------------------------


def _beta_text(beta: Fraction) -> str:
    return str(float(beta)) if Fraction(float(beta)) == beta else str(beta)


def build_manifest(
    round: int,
    beta: Fraction | None,
    files: Sequence[Path],
    mix: dict[str, Any] | None = None,
    tally: Sequence[str] | None = None,
) -> dict[str, Any]:
    """Per-file line counts and checksums plus per-env, per-pool totals.

    ``tally`` names the files whose records enter the per-pool totals; by
    default every file except mixed outputs.
    """
    entries: dict[str, Any] = {}
    counts: dict[str, dict[str, int]] = {}
    for path in files:
        path = Path(path)
        records = load_records(path)
        per_pool = Counter(r.pool for r in records)
        entries[path.name] = {
            "records": count_record_lines(path),
            "pools": dict(sorted(per_pool.items())),
            "sha256": sha256_file(path),
        }
        if (path.name not in tally) if tally is not None else path.name.startswith("mixed"):
            continue
        for r in records:
            env = r.provenance.env_id if r.provenance else "general"
            counts.setdefault(env or "unknown", Counter())[r.pool] += 1
    manifest: dict[str, Any] = {
        "round": round,
        "beta": _beta_text(Fraction(beta)) if beta is not None else None,
        "counts": {env: dict(sorted(c.items())) for env, c in sorted(counts.items())},
        "files": entries,
    }
    if mix is not None:
        manifest["mix"] = mix
    return manifest


def write_manifest(path: str | Path, manifest: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verify_manifest(manifest_path: str | Path) -> list[str]:
    """Compare recorded counts and checksums against the files next to the manifest."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    problems = []
    for name, entry in manifest["files"].items():
        path = manifest_path.parent / name
        if not path.exists():
            problems.append(f"{name}: missing")
            continue
        if count_record_lines(path) != entry["records"]:
            problems.append(f"{name}: {count_record_lines(path)} lines, manifest says {entry['records']}")
        if sha256_file(path) != entry["sha256"]:
            problems.append(f"{name}: checksum mismatch")
    return problems


# -- provenance audit ----------------------------------------------------------

_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


def log_name(task_id: str) -> str:
    return _UNSAFE.sub("_", task_id) + ".jsonl"


def audit_provenance(run_dir: str | Path) -> tuple[int, list[str]]:
    """Check that every non-general record under ``run_dir`` resolves to a reward-1 log.

    Returns (records checked, violations).
    """
    from .trajectory import LogFormatError, read_trajectory

    run_dir = Path(run_dir)
    cache: dict[Path, Trajectory | None] = {}
    checked, violations = 0, []
    for path in sorted(run_dir.glob("round_*/datasets/*.json")):
        if path.name.startswith("manifest"):
            continue
        for rec in load_records(path):
            if rec.pool == "general":
                continue
            checked += 1
            p = rec.provenance
            assert p is not None
            log_path = run_dir / f"round_{p.round}" / "trajectories" / log_name(p.task_id)
            if log_path not in cache:
                try:
                    cache[log_path] = read_trajectory(log_path)
                except (OSError, LogFormatError):
                    cache[log_path] = None
            traj = cache[log_path]
            where = f"{path.relative_to(run_dir)}: {p.task_id} round {p.round}"
            if traj is None:
                violations.append(f"{where}: no readable log")
            elif traj.aborted or traj.final_reward != 1.0:
                violations.append(f"{where}: source reward is not 1")
            elif traj.run_id != p.run_id:
                violations.append(f"{where}: run id mismatch")
            elif p.t is not None and p.t >= len(traj.steps):
                violations.append(f"{where}: step {p.t} out of range")
    return checked, violations
