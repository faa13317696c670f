"""Critique-guided episodes and the multi-round exploration driver."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from . import forge
from .bridge import BridgeEnv, BridgeError
from .craftsim.env import CraftEnv, CraftTask, default_max_steps
from .critic import Critic, CritiqueRequest, make_critic
from .policy.actors import Actor, ActorConfig, EpisodeContext, make_actor, refine_action
from .policy.chat import BackendUnavailable
from .policy.prompts import render_actor_prompt
from .trajectory import (
    AgentAction,
    CandidateBuffer,
    Instruction,
    Step,
    Trajectory,
    TrajectoryLogWriter,
    append_step,
    executed_commands,
    render_history,
)

log = logging.getLogger(__name__)

DEFAULT_ROUNDS = 3
CRITIQUE_MODES = ("per-step", "off")


class HookFailed(RuntimeError):
    pass


class Interrupted(RuntimeError):
    pass


# errors that abort one episode instead of the whole run
EPISODE_ERRORS = (BackendUnavailable, BridgeError, OSError, TimeoutError, Interrupted)


def hash64(*parts: object) -> int:
    text = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def episode_seed(master_seed: int, round: int, task_id: str) -> int:
    return hash64(master_seed, round, task_id)


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "craftsim"  # "craftsim" (in-process) | "bridge"
    endpoint: str | tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("craftsim", "bridge"):
            raise ValueError(f"unknown env kind {self.kind!r}")
        if self.kind == "bridge" and not self.endpoint:
            raise ValueError("bridge env needs an endpoint")

    def make(self, max_steps: int):
        if self.kind == "craftsim":
            return CraftEnv(max_steps=max_steps)
        return BridgeEnv(self.endpoint, max_steps=max_steps)


@dataclass(frozen=True)
class EpisodeConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    actor: ActorConfig = field(default_factory=ActorConfig)
    critic: str = "oracle"  # "oracle" | "remote" | "none"
    critic_noise: float = 0.0
    expert_critic: bool = False  # remote critic sees the gold path (critique collection)
    max_steps: int | None = None  # None: max(10, 4 * oracle_length)
    seed: int = 0
    critique_mode: str = "per-step"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.critique_mode not in CRITIQUE_MODES:
            raise ValueError(f"critique_mode must be one of {CRITIQUE_MODES}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def critiques_on(self) -> bool:
        return self.critique_mode == "per-step" and self.critic not in ("none", "off")


def _instruction(task) -> Instruction:
    return task.instruction if isinstance(task, CraftTask) else task


def task_id_of(task) -> str:
    return _instruction(task).task_id


@dataclass
class Backends:
    """Actor and critic shared by all episodes of a run (both are stateless per call)."""

    actor: Actor
    critic: Critic | None

    @classmethod
    def from_config(cls, cfg: EpisodeConfig) -> "Backends":
        critic = make_critic(cfg.critic, q=cfg.critic_noise, expert=cfg.expert_critic) if cfg.critiques_on else None
        return cls(make_actor(cfg.actor), critic)


def run_episode(
    cfg: EpisodeConfig,
    task,
    *,
    round: int = 0,
    run_id: str = "",
    log_path: str | Path | None = None,
    backends: Backends | None = None,
    stop: threading.Event | None = None,
) -> Trajectory:
    """Run one episode to termination or the step limit.

    Backend and bridge failures end the episode with ``aborted=True``; the
    partial log is still closed with an abort footer.
    """
    backends = backends or Backends.from_config(cfg)
    instr = _instruction(task)
    seed = episode_seed(cfg.seed, round, instr.task_id)
    limit = cfg.max_steps or default_max_steps(instr.oracle_length)
    traj = Trajectory(instr, seed=seed, round=round, max_steps=limit, run_id=run_id)
    ctx = EpisodeContext(
        instruction=instr,
        rng=random.Random(seed),
        seed=seed,
        graph=task.graph if isinstance(task, CraftTask) else None,
        target=task.target if isinstance(task, CraftTask) else None,
        critic_rng=random.Random(hash64(seed, "critic")),
    )
    writer = TrajectoryLogWriter(Path(log_path)) if log_path is not None else None
    if writer:
        writer.open(traj)
    env = cfg.env.make(limit)
    try:
        env.reset(task, seed)
        while not traj.done and len(traj) < limit:
            if stop is not None and stop.is_set():
                raise Interrupted("interrupted")
            ctx.executed = executed_commands(traj)
            ctx.history = render_history(traj)
            ctx.available_actions = getattr(env, "available_actions", None)
            step = _one_step(cfg, backends, instr, traj, ctx, env)
            traj = append_step(traj, step)
            if writer:
                writer.step(step)
    except EPISODE_ERRORS as exc:
        traj = replace(traj, aborted=True, error=f"{type(exc).__name__}: {exc}")
        log.warning("episode %s aborted: %s", instr.task_id, traj.error)
    except KeyboardInterrupt:
        traj = replace(traj, aborted=True, error="Interrupted: interrupted")
        raise
    finally:
        env.close()
        if writer:
            writer.close(traj)
    return traj


def _one_step(cfg: EpisodeConfig, backends: Backends, instr: Instruction, traj: Trajectory, ctx: EpisodeContext, env) -> Step:
    prompt = render_actor_prompt(instr.env_id, instr, traj.steps)
    buffer = backends.actor.sample_candidates(prompt, ctx)
    if backends.critic is not None:
        actions = "\n".join(ctx.available_actions) if ctx.available_actions else None
        critiques = [
            backends.critic.critique(
                CritiqueRequest(instr.env_id, ctx.history, cand, instr.gold_path, actions, ctx.executed), ctx
            )
            for cand in buffer.candidates
        ]
        buffer = buffer.with_critiques(critiques)
        action = refine_action(backends.actor, prompt, buffer, ctx)
    else:
        action = buffer.candidates[0]
    obs = env.step(action.command)
    return Step(len(traj), buffer, action, obs)


def replay_gold(cfg: EpisodeConfig, task, *, run_id: str = "", log_path: str | Path | None = None) -> Trajectory:
    """Execute the gold path as a round-0 expert trajectory."""
    instr = _instruction(task)
    if instr.gold_path is None:
        raise ValueError(f"task {instr.task_id} has no gold path")
    seed = episode_seed(cfg.seed, 0, instr.task_id)
    limit = cfg.max_steps or default_max_steps(instr.oracle_length)
    traj = Trajectory(instr, seed=seed, round=0, max_steps=limit, run_id=run_id)
    writer = TrajectoryLogWriter(Path(log_path)) if log_path is not None else None
    if writer:
        writer.open(traj)
    env = cfg.env.make(limit)
    try:
        env.reset(task, seed)
        for command in instr.gold_path:
            if traj.done or len(traj) >= limit:
                break
            action = AgentAction.from_command(command, thought=f"I will {command}.")
            step = Step(len(traj), CandidateBuffer((action,)), action, env.step(command))
            traj = append_step(traj, step)
            if writer:
                writer.step(step)
    except EPISODE_ERRORS as exc:
        traj = replace(traj, aborted=True, error=f"{type(exc).__name__}: {exc}")
    except KeyboardInterrupt:
        traj = replace(traj, aborted=True, error="Interrupted: interrupted")
        raise
    finally:
        env.close()
        if writer:
            writer.close(traj)
    return traj


# -- rounds --------------------------------------------------------------------


@dataclass(frozen=True)
class RefinePair:
    task_id: str
    t: int
    history: str
    buffer: CandidateBuffer
    refined_action: AgentAction


@dataclass
class RoundHarvest:
    round: int
    trajectories: list[Trajectory]
    d_correct: list[Trajectory]
    d_refine: list[RefinePair]
    stats: dict[str, Any]

    @property
    def completed(self) -> list[Trajectory]:
        return [t for t in self.trajectories if not t.aborted]


def harvest(round: int, trajectories: Sequence[Trajectory]) -> RoundHarvest:
    """Reduce finished episodes into reward-filtered pools."""
    trajectories = list(trajectories)
    correct = [t for t in trajectories if not t.aborted and t.steps and t.final_reward == 1.0]
    refine = [
        RefinePair(t.task_id, s.index, render_history(t, s.index), s.candidates, s.refined_action)
        for t in correct
        for s in t.steps
        if s.candidates.critiques
    ]
    aborted = sum(t.aborted for t in trajectories)
    finished = len(trajectories) - aborted
    stats = {
        "round": round,
        "episodes": len(trajectories),
        "aborted": aborted,
        "correct": len(correct),
        "failed": finished - len(correct),
        "refine_pairs": len(refine),
        "success_rate": (len(correct) / finished) if finished else None,
    }
    return RoundHarvest(round, trajectories, correct, refine, stats)


def round_dir(run_dir: str | Path, k: int) -> Path:
    return Path(run_dir) / f"round_{k}"


def _run_parallel(fn, tasks: Sequence, workers: int, stop: threading.Event) -> list[Trajectory]:
    if workers == 1:
        return [fn(task) for task in tasks]
    pool = ThreadPoolExecutor(max_workers=workers)
    try:
        futures = [pool.submit(fn, task) for task in tasks]
        return [f.result() for f in futures]
    except KeyboardInterrupt:
        stop.set()
        raise
    finally:
        pool.shutdown(wait=True)


def run_exploration(
    k: int,
    tasks: Sequence,
    cfg: EpisodeConfig,
    *,
    run_dir: str | Path | None = None,
    run_id: str = "",
    backends: Backends | None = None,
    stop: threading.Event | None = None,
) -> RoundHarvest:
    if k < 1:
        raise ValueError("exploration rounds start at 1")
    backends = backends or Backends.from_config(cfg)
    stop = stop or threading.Event()
    out = round_dir(run_dir, k) if run_dir is not None else None

    def one(task) -> Trajectory:
        path = out / "trajectories" / forge.log_name(task_id_of(task)) if out is not None else None
        return run_episode(cfg, task, round=k, run_id=run_id, log_path=path, backends=backends, stop=stop)

    result = harvest(k, _run_parallel(one, tasks, cfg.workers, stop))
    if out is not None:
        _write_json(out / "harvest_stats.json", result.stats)
    return result


def run_expert_round(tasks: Sequence, cfg: EpisodeConfig, *, run_dir: str | Path | None = None, run_id: str = "") -> RoundHarvest:
    out = round_dir(run_dir, 0) if run_dir is not None else None
    trajs = []
    for task in tasks:
        path = out / "trajectories" / forge.log_name(task_id_of(task)) if out is not None else None
        trajs.append(replay_gold(cfg, task, run_id=run_id, log_path=path))
    result = harvest(0, trajs)
    if out is not None:
        _write_json(out / "harvest_stats.json", result.stats)
    return result


def _write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- trainer hook --------------------------------------------------------------


@dataclass(frozen=True)
class TrainerHook:
    """External fine-tune command. Placeholders: {mixed_dataset}, {round}, {base_endpoint}.

    The last nonempty stdout line is taken as the new actor endpoint.
    """

    template: str
    timeout: float | None = None

    def __call__(self, mixed_dataset: Path, round: int, base_endpoint: str) -> str:
        argv = [
            part.format(mixed_dataset=str(mixed_dataset), round=round, base_endpoint=base_endpoint)
            for part in shlex.split(self.template)
        ]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise HookFailed(f"trainer hook could not run: {exc}") from exc
        if proc.returncode != 0:
            raise HookFailed(f"trainer hook exited {proc.returncode}: {proc.stderr.strip()[-500:]}")
        lines = [ln.strip() for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            raise HookFailed("trainer hook printed no endpoint")
        return lines[-1]


@dataclass(frozen=True)
class MixSettings:
    beta: Fraction = Fraction(4, 5)
    general: Path | None = None
    total: int | None = None
    seed: int = 0
    only_revised: bool = False


@dataclass
class IterationResult:
    harvests: list[RoundHarvest]
    manifests: list[Path]
    endpoints: list[str | None]


def run_iterations(
    K: int,
    tasks: Sequence,
    cfg: EpisodeConfig,
    *,
    run_dir: str | Path,
    run_id: str,
    trainer_hook: TrainerHook | None = None,
    mix: MixSettings = MixSettings(),
    stop: threading.Event | None = None,
) -> IterationResult:
    """K rounds of exploration then dataset emission then (optionally) external fine-tuning.

    D_train and D_refine accumulate over rounds with exact-byte de-duplication.
    The hook always fine-tunes from the base endpoint; its returned endpoint
    drives the next round's actor.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    run_dir = Path(run_dir)
    base_endpoint = cfg.actor.endpoint or ""
    expert_round = run_expert_round(tasks, cfg, run_dir=run_dir, run_id=run_id)
    expert_records = forge.build_expert_records(expert_round.d_correct)
    forge.write_records(round_dir(run_dir, 0) / "datasets" / "expert.json", expert_records)

    train: list[forge.DatasetRecord] = list(expert_records)
    refine: list[forge.DatasetRecord] = []
    result = IterationResult([], [], [])
    actor_cfg = cfg.actor
    for k in range(1, K + 1):
        round_cfg = replace(cfg, actor=actor_cfg)
        h = run_exploration(k, tasks, round_cfg, run_dir=run_dir, run_id=run_id, stop=stop)
        result.harvests.append(h)
        correct = forge.build_correct_records(h)
        train = forge.union_train(train, correct)
        if h.d_refine:
            refine = forge.dedup([*refine, *forge.build_refine_records(h.d_correct, mix.only_revised)])
        ds = round_dir(run_dir, k) / "datasets"
        files = [
            forge.write_records(ds / "correct.json", correct),
            forge.write_records(ds / "train.json", train),
            forge.write_records(ds / "refine.json", refine),
        ]
        if cfg.critiques_on and (cfg.critic == "oracle" or cfg.expert_critic):
            files.append(forge.write_records(ds / "critique.json", forge.build_critique_records(h)))
        general = forge.load_records(mix.general) if (mix.general is not None and mix.beta < 1) else []
        mixed, a, g, capped = forge.mix_records([*train, *refine], general, mix.beta, mix.total, hash64(mix.seed, k))
        mixed_path = forge.write_records(ds / f"mixed_round{k}.json", mixed)
        if general:
            files.append(Path(mix.general))
        files.append(mixed_path)
        manifest = forge.build_manifest(
            k, mix.beta, files, mix={"agentic": a, "general": g, "total": a + g, "seed": hash64(mix.seed, k), "capped": capped},
            tally=("train.json", "refine.json", "critique.json"),
        )
        # the general corpus lives outside the round directory; keep only its checksum
        if general:
            manifest["general_source"] = manifest["files"].pop(Path(mix.general).name)
        result.manifests.append(forge.write_manifest(ds / f"manifest_round{k}.json", manifest))

        endpoint = None
        if trainer_hook is not None:
            endpoint = trainer_hook(mixed_path, k, base_endpoint)
            actor_cfg = replace(cfg.actor, endpoint=endpoint)
        result.endpoints.append(endpoint)
    return result
