"""Actor backends: sample M candidates, then refine using critiques."""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from ..craftsim.commands import UnparsableCommand, canonical, parse_command
from ..craftsim.generator import recipe_line
from ..craftsim.graph import RecipeGraph
from ..craftsim.solver import gold_progress
from ..trajectory import AgentAction, CandidateBuffer, Grade, Instruction
from .chat import ChatClient
from .parsing import parse_lenient
from .prompts import ChatTurn

DEFAULT_M = 5


class NoCritiques(ValueError):
    pass


@dataclass(frozen=True)
class ActorConfig:
    backend: str = "scripted"  # "scripted" | "remote"
    m_candidates: int = DEFAULT_M
    temperature: float = 1.0
    fidelity: float = 1.0
    seed: int = 0
    dedup: bool = False
    model: str = "default"
    endpoint: str | None = None
    tracking: str = "open-loop"  # scripted actor: "open-loop" | "closed-loop"

    def __post_init__(self) -> None:
        if self.backend not in ("scripted", "remote"):
            raise ValueError(f"unknown actor backend {self.backend!r}")
        if self.m_candidates < 1:
            raise ValueError("m_candidates must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if not 0.0 <= self.fidelity <= 1.0:
            raise ValueError("fidelity must lie in [0, 1]")
        if self.tracking not in ("open-loop", "closed-loop"):
            raise ValueError(f"unknown tracking mode {self.tracking!r}")


@dataclass
class EpisodeContext:
    """Per-episode state handed to actors and critics. Single owner."""

    instruction: Instruction
    rng: random.Random
    seed: int = 0
    graph: RecipeGraph | None = None
    target: str | None = None
    executed: tuple[str, ...] = ()
    history: str = ""
    available_actions: Sequence[str] | None = None
    critic_rng: random.Random = field(default_factory=random.Random)


def render_refine_turn(buffer: CandidateBuffer) -> str:
    """Human turn presenting every candidate with its critique."""
    if len(buffer.critiques) != len(buffer.candidates):
        raise NoCritiques("every candidate needs a critique before refinement")
    blocks = [f"Here are {len(buffer.candidates)} candidate actions for the next step, each followed by a critique."]
    for i, (cand, crit) in enumerate(zip(buffer.candidates, buffer.critiques), start=1):
        blocks.append(f"Candidate {i}: {cand.command}\nCritique {i}:\n{crit.raw}")
    blocks.append(
        "Considering the critiques, give your final action for this step. "
        "Your response should use the following format:\n\nThought: ...\nAction: ..."
    )
    return "\n\n".join(blocks)


def _grade_key(buffer: CandidateBuffer, i: int) -> int:
    g = buffer.critiques[i].grade
    return -1 if g is None else int(g)


def is_craft_command(text: str) -> bool:
    try:
        parse_command(text)
    except UnparsableCommand:
        return False
    return True


def is_single_line(text: str) -> bool:
    return bool(text.strip()) and "\n" not in text.strip()


def scripted_refine(buffer: CandidateBuffer, accepts: Callable[[str], bool] = is_craft_command) -> AgentAction:
    """Pick the best-graded candidate (lowest index on ties) if at least Good,
    else the best critique's suggested revision when ``accepts`` it as a command,
    else candidate 0."""
    if not buffer.critiques:
        raise NoCritiques("refinement requires critiques")
    best = max(range(len(buffer.candidates)), key=lambda i: (_grade_key(buffer, i), -i))
    if _grade_key(buffer, best) >= Grade.GOOD:
        return buffer.candidates[best]
    suggestion = (buffer.critiques[best].suggested_revision or "").strip()
    if suggestion and accepts(suggestion):
        return AgentAction.from_command(suggestion, thought="Following the critique's suggested revision.")
    return buffer.candidates[0]


class Actor(Protocol):
    config: ActorConfig

    def sample_candidates(self, prompt: Sequence[ChatTurn], ctx: EpisodeContext) -> CandidateBuffer: ...

    def refine_action(self, prompt: Sequence[ChatTurn], buffer: CandidateBuffer, ctx: EpisodeContext) -> AgentAction: ...


class ScriptedActor:
    """Emits the gold next action with probability ``fidelity``, else a distractor.

    Open-loop tracking reads the script position from the step count, so a
    mistake is never noticed and the script runs ahead of the environment.
    Closed-loop tracking recomputes the position from what actually executed.
    All randomness comes from the episode context's RNG.
    """

    def __init__(self, config: ActorConfig):
        self.config = config

    def gold_next(self, ctx: EpisodeContext) -> str | None:
        gold = ctx.instruction.gold_path or ()
        if self.config.tracking == "open-loop":
            pointer = len(ctx.executed)
        else:
            pointer, _ = gold_progress(gold, ctx.executed, ctx.graph, ctx.target)
        return gold[pointer] if pointer < len(gold) else None

    def distractors(self, ctx: EpisodeContext, gold_next: str | None) -> list[str]:
        if ctx.graph is not None:
            pool = ["inventory"]
            pool += [f"get {b}" for b in sorted(ctx.graph.base_items)]
            pool += sorted(recipe_line(r) for r in ctx.graph.recipes)
        else:
            pool = sorted(set(ctx.instruction.gold_path or ())) + list(ctx.available_actions or ())
        skip = canonical(gold_next) if gold_next is not None else None
        pool = [c for c in pool if canonical(c) != skip]
        return pool or ([gold_next] if gold_next else ["inventory"])

    def _draw(self, ctx: EpisodeContext, gold_next: str | None, pool: list[str]) -> str:
        if gold_next is not None and ctx.rng.random() < self.config.fidelity:
            return gold_next
        return ctx.rng.choice(pool)

    def sample_candidates(self, prompt: Sequence[ChatTurn], ctx: EpisodeContext) -> CandidateBuffer:
        if not prompt:
            raise ValueError("empty prompt")
        gold_next = self.gold_next(ctx)
        pool = self.distractors(ctx, gold_next)
        commands: list[str] = []
        for _ in range(self.config.m_candidates):
            cmd = self._draw(ctx, gold_next, pool)
            if self.config.dedup:
                for _retry in range(10):
                    if canonical(cmd) not in {canonical(c) for c in commands}:
                        break
                    cmd = self._draw(ctx, gold_next, pool)
            commands.append(cmd)
        return CandidateBuffer(tuple(AgentAction.from_command(c, thought=f"I will {c}.") for c in commands))

    def refine_action(self, prompt: Sequence[ChatTurn], buffer: CandidateBuffer, ctx: EpisodeContext) -> AgentAction:
        return scripted_refine(buffer, is_craft_command if ctx.graph is not None else is_single_line)


class RemoteActor:
    def __init__(self, config: ActorConfig, client: ChatClient):
        self.config = config
        self.client = client

    def sample_candidates(self, prompt: Sequence[ChatTurn], ctx: EpisodeContext) -> CandidateBuffer:
        if not prompt:
            raise ValueError("empty prompt")
        texts = self.client.complete(prompt, n=self.config.m_candidates, temperature=self.config.temperature)
        actions = [parse_lenient(t)[0] for t in texts]
        if self.config.dedup:
            seen: set[str] = set()
            kept = []
            for a in actions:
                if canonical(a.command) not in seen:
                    seen.add(canonical(a.command))
                    kept.append(a)
            actions = kept
        return CandidateBuffer(tuple(actions))

    def refine_action(self, prompt: Sequence[ChatTurn], buffer: CandidateBuffer, ctx: EpisodeContext) -> AgentAction:
        turns = list(prompt) + [ChatTurn("human", render_refine_turn(buffer))]
        (text,) = self.client.complete(turns, n=1, temperature=self.config.temperature)
        return parse_lenient(text)[0]


def make_actor(config: ActorConfig, client: ChatClient | None = None) -> Actor:
    if config.backend == "scripted":
        return ScriptedActor(config)
    if client is None:
        client = ChatClient(
            config.endpoint or os.environ.get("ACTOR_ENDPOINT", ""),
            model=config.model,
            api_key=os.environ.get("ACTOR_KEY"),
        )
    return RemoteActor(config, client)


def sample_candidates(actor: Actor, prompt: Sequence[ChatTurn], ctx: EpisodeContext) -> CandidateBuffer:
    return actor.sample_candidates(prompt, ctx)


def refine_action(actor: Actor, prompt: Sequence[ChatTurn], buffer: CandidateBuffer, ctx: EpisodeContext) -> AgentAction:
    if len(buffer.critiques) != len(buffer.candidates):
        raise NoCritiques("every candidate needs a critique before refinement")
    return actor.refine_action(prompt, buffer, ctx)
