"""Critic engine: critique prompts, the critique text format, and critic backends.

Critique text format (headers in this order, blank line between sections)::

    ## Contribution: ...
    ## Feasibility: ...
    ## Efficiency: ...
    ## Overall Grading: Good
    ## Suggested Revision: ...
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace
from typing import Protocol, Sequence

from .craftsim.commands import Craft, Get, Inventory, UnparsableCommand, canonical, parse_command
from .craftsim.env import CraftState, apply_command
from .craftsim.graph import RecipeGraph
from .craftsim.solver import gold_progress
from .policy.actors import EpisodeContext
from .policy.chat import ChatClient
from .policy.prompts import ChatTurn, available_actions, load_asset, prompt_family
from .trajectory import AgentAction, Critique, Grade


class MissingGrade(ValueError):
    pass


class MissingPlaceholder(KeyError):
    pass


SECTIONS = ("Contribution", "Feasibility", "Efficiency", "Overall Grading", "Suggested Revision")
GOLD_HEADING = "Referenced Gold Path for Current Task"

_HEADER = re.compile(
    r"^[ \t]*##[ \t]*(contribution|feasibility|efficiency|overall[ \t]+grading|suggested[ \t]+revision)[ \t]*:?",
    re.IGNORECASE | re.MULTILINE,
)
_GRADE_WORD = re.compile(r"\b(?:(very[\s_-]*poor)|(excellent)|(good)|(neutral)|(poor))\b", re.IGNORECASE)
_GRADE_BY_GROUP = (Grade.VERY_POOR, Grade.EXCELLENT, Grade.GOOD, Grade.NEUTRAL, Grade.POOR)
_NO_REVISION = {"", "none", "n/a", "na", "none.", "n/a."}


@dataclass(frozen=True)
class CritiqueRequest:
    env_id: str
    history: str
    candidate: AgentAction
    gold_path: tuple[str, ...] | None = None
    available_actions: str | None = None
    executed: tuple[str, ...] | None = None

    @property
    def expert(self) -> bool:
        return self.gold_path is not None


# -- prompts -------------------------------------------------------------------


def _fill(template: str, values: dict[str, str | None]) -> str:
    out = template
    for name, value in values.items():
        token = "{" + name + "}"
        if token not in out:
            continue
        if value is None:
            raise MissingPlaceholder(name)
        out = out.replace(token, value)
    return out


def render_critique_prompt(req: CritiqueRequest, *, expert: bool | None = None) -> list[ChatTurn]:
    """Single human turn. The gold-path template is used iff a gold path is given
    (``expert=False`` forces the plain variant, e.g. for training inputs)."""
    prompt_family(req.env_id)
    use_gold = req.expert if expert is None else (expert and req.expert)
    template = load_asset("critique_gold" if use_gold else "critique_plain")
    values: dict[str, str | None] = {
        "available_actions": req.available_actions if req.available_actions is not None else available_actions(req.env_id),
        "history": req.history,
        "candidate_action": req.candidate.command,
    }
    if use_gold:
        values["gold_path"] = "\n".join(req.gold_path or ())
    return [ChatTurn("human", _fill(template, values))]


# -- critique text -------------------------------------------------------------


def render_critique(
    contribution: str,
    feasibility: str,
    efficiency: str,
    grade: Grade,
    suggested_revision: str | None,
) -> Critique:
    raw = "\n\n".join(
        [
            f"## Contribution: {contribution}",
            f"## Feasibility: {feasibility}",
            f"## Efficiency: {efficiency}",
            f"## Overall Grading: {grade.label}",
            f"## Suggested Revision: {suggested_revision if suggested_revision is not None else 'None'}",
        ]
    )
    return Critique(contribution, feasibility, efficiency, grade, suggested_revision, raw)


def _section_key(header: str) -> str:
    return " ".join(header.split()).lower()


def split_sections(raw: str) -> dict[str, str]:
    matches = list(_HEADER.finditer(raw))
    sections: dict[str, str] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        key = _section_key(m.group(1))
        sections.setdefault(key, raw[m.end():end].strip())
    return sections


def find_grade(text: str) -> Grade | None:
    m = _GRADE_WORD.search(text)
    if m is None:
        return None
    group = next(i for i, g in enumerate(m.groups()) if g is not None)
    return _GRADE_BY_GROUP[group]


def parse_critique(raw: str) -> Critique:
    sections = split_sections(raw)
    if "overall grading" not in sections:
        raise MissingGrade("no '## Overall Grading' section")
    grade = find_grade(sections["overall grading"])
    if grade is None:
        raise MissingGrade(f"no grade word in {sections['overall grading']!r}")
    revision = sections.get("suggested revision", "")
    return Critique(
        contribution=sections.get("contribution", ""),
        feasibility=sections.get("feasibility", ""),
        efficiency=sections.get("efficiency", ""),
        grade=grade,
        suggested_revision=None if revision.strip().lower() in _NO_REVISION else revision,
        raw=raw,
    )


def parse_critique_lenient(raw: str) -> Critique:
    """Never raises: ungradable text yields a Critique with ``grade=None``."""
    try:
        return parse_critique(raw)
    except MissingGrade:
        s = split_sections(raw)
        return Critique(s.get("contribution", ""), s.get("feasibility", ""), s.get("efficiency", ""), None, None, raw)


# -- oracle rubric -------------------------------------------------------------

_VALID = "The action is valid: it follows the allowed command grammar and can be executed with the current inventory."


def _infer_target(graph: RecipeGraph) -> str:
    consumed = {c for r in graph.recipes for name, _ in r.inputs for c in graph.expand(name)}
    sinks = sorted({r.output for r in graph.recipes} - consumed)
    if len(sinks) != 1:
        raise ValueError("cannot infer a unique target; pass it explicitly")
    return sinks[0]


def _unknown_item(cmd, graph: RecipeGraph) -> str | None:
    names: list[str] = []
    if isinstance(cmd, Get):
        names = [cmd.item]
    elif isinstance(cmd, Craft):
        names = [cmd.output] + [n for n, _ in cmd.inputs]
    return next((n for n in names if not graph.known(n)), None)


def _simulate(state: CraftState, graph: RecipeGraph, commands: Sequence[str]) -> bool:
    for cmd in commands:
        state, _, ok = apply_command(state, graph, cmd)
        if not ok:
            return False
    return True


def _needed_later(graph: RecipeGraph, remaining: Sequence[str], target: str) -> set[str]:
    needed = {target}
    for text in remaining:
        cmd = parse_command(text)
        if isinstance(cmd, Craft):
            for name, _ in cmd.inputs:
                needed |= graph.expand(name)
    return needed


def oracle_critique(
    req: CritiqueRequest,
    graph: RecipeGraph,
    target: str | None = None,
) -> Critique:
    """Grade a candidate against the gold next action.

    Excellent: same command as the gold step. Good: different command, same
    resulting inventory. Neutral: acquires an item the remaining gold steps use.
    Poor: not executable, unknown item, or no progress. Very Poor: consumes items
    later gold steps need, repeats a finished step, or the gold plan is exhausted.
    """
    if req.gold_path is None:
        raise ValueError("oracle critique needs a gold path")
    target = target or _infer_target(graph)
    gold = req.gold_path
    executed = req.executed if req.executed is not None else ()
    n, state = gold_progress(gold, executed, graph, target)
    assert state is not None
    text = req.candidate.command

    try:
        cmd = parse_command(text)
    except UnparsableCommand:
        return _poor_infeasible(
            "it does not match the allowed command grammar (get, craft ... using ..., inventory)",
            gold[n] if n < len(gold) else None,
        )
    unknown = _unknown_item(cmd, graph)
    if unknown is not None:
        return _poor_infeasible(f"it refers to an unknown item '{unknown}'", gold[n] if n < len(gold) else None)

    if n >= len(gold):
        return render_critique(
            f"The task should already be complete once {target} is crafted; no further action contributes.",
            "The action is syntactically valid.",
            "Any further action is redundant.",
            Grade.VERY_POOR,
            None,
        )

    g = gold[n]
    if canonical(text) == canonical(g):
        return render_critique(
            f"The action is exactly the next step needed toward crafting {target}.",
            _VALID,
            "The action is optimal; no step is wasted.",
            Grade.EXCELLENT,
            None,
        )

    after, message, ok = apply_command(state, graph, text)
    if not ok:
        return _poor_infeasible(f"it cannot be executed in the current state ({message})", g)
    if isinstance(cmd, Inventory) or after.inventory == state.inventory:
        return render_critique(
            "The action does not move the task forward.",
            _VALID,
            "The action spends a step without making progress.",
            Grade.POOR,
            g,
        )

    gold_after, _, gold_ok = apply_command(state, graph, g)
    if gold_ok and gold_after.inventory == after.inventory:
        return render_critique(
            "The action advances the task exactly as much as the best next step.",
            _VALID,
            "The action is efficient, although it is phrased differently from the most direct command.",
            Grade.GOOD,
            g,
        )

    done_before = {canonical(c) for c in gold[:n]}
    still_to_do = [canonical(c) for c in gold[n:]]
    if canonical(text) in done_before and canonical(text) not in still_to_do:
        return render_critique(
            "The action repeats a step that has already been completed.",
            _VALID,
            "The action is redundant and wastes a step.",
            Grade.VERY_POOR,
            g,
        )

    if isinstance(cmd, Craft) and _simulate(state, graph, gold[n:]):
        rest = list(gold[n:])
        key = canonical(text)
        for i, c in enumerate(rest):
            if canonical(c) == key:
                del rest[i]
                break
        if not _simulate(after, graph, rest):
            return render_critique(
                "The action works against the task: it consumes items that later steps still need.",
                _VALID,
                "The action is counterproductive and will cost extra steps to recover from.",
                Grade.VERY_POOR,
                g,
            )

    gained = {item for item, cnt in after.inventory if cnt > state.counts[item]}
    useful = sorted(gained & _needed_later(graph, gold[n:], target))
    if useful:
        return render_critique(
            f"The action acquires {', '.join(useful)}, which is still needed later, but it is not the most pressing step.",
            _VALID,
            "The action is out of order; a more direct step is available now.",
            Grade.NEUTRAL,
            g,
        )
    return render_critique(
        "The action does not move the task forward.",
        _VALID,
        "The action spends a step without making progress.",
        Grade.POOR,
        g,
    )


def _poor_infeasible(reason: str, revision: str | None) -> Critique:
    return render_critique(
        "The action cannot contribute to the task as written.",
        f"The action is not valid: {reason}.",
        "The action wastes a step.",
        Grade.POOR,
        revision,
    )


def gold_only_critique(req: CritiqueRequest) -> Critique:
    """Graph-free fallback for bridged environments: exact match or revision."""
    gold = req.gold_path or ()
    n, _ = gold_progress(gold, req.executed or ())
    if n >= len(gold):
        return render_critique("The task should already be complete.", "Unknown.", "Any further action is redundant.", Grade.VERY_POOR, None)
    if canonical(req.candidate.command) == canonical(gold[n]):
        return render_critique("The action is exactly the next step needed.", "The action is valid.", "The action is optimal.", Grade.EXCELLENT, None)
    return render_critique(
        "The action differs from the best next step.", "The action may not be valid here.", "A more direct step is available.", Grade.POOR, gold[n]
    )


# -- backends ------------------------------------------------------------------


class Critic(Protocol):
    def critique(self, req: CritiqueRequest, ctx: EpisodeContext) -> Critique: ...


class OracleCritic:
    """Deterministic gold-path critic; stands in for both expert annotator and trained critic."""

    def critique(self, req: CritiqueRequest, ctx: EpisodeContext) -> Critique:
        if req.gold_path is None:
            req = replace(req, gold_path=ctx.instruction.gold_path)
        if req.gold_path is None:
            raise ValueError(f"task {ctx.instruction.task_id} has no gold path")
        if ctx.graph is None:
            return gold_only_critique(req)
        return oracle_critique(req, ctx.graph, ctx.target)


class RemoteCritic:
    def __init__(self, client: ChatClient, *, expert: bool = False, temperature: float = 0.0):
        self.client = client
        self.expert = expert
        self.temperature = temperature

    def critique(self, req: CritiqueRequest, ctx: EpisodeContext) -> Critique:
        if self.expert and req.gold_path is None:
            req = replace(req, gold_path=ctx.instruction.gold_path)
        if not self.expert:
            req = replace(req, gold_path=None)
        (text,) = self.client.complete(render_critique_prompt(req), n=1, temperature=self.temperature)
        return parse_critique_lenient(text)


class DegradedCritic:
    """Replaces the grade with a uniformly random level with probability ``q``."""

    def __init__(self, inner: Critic, q: float):
        if not 0.0 <= q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        self.inner = inner
        self.q = q

    def critique(self, req: CritiqueRequest, ctx: EpisodeContext) -> Critique:
        c = self.inner.critique(req, ctx)
        if self.q == 0.0:
            return c
        rng = ctx.critic_rng
        if rng.random() >= self.q:
            return c
        grade = rng.choice(list(Grade))
        return render_critique(c.contribution, c.feasibility, c.efficiency, grade, c.suggested_revision)


def make_critic(kind: str, *, q: float = 0.0, client: ChatClient | None = None, expert: bool = False) -> Critic | None:
    if kind in ("none", "off"):
        return None
    if kind == "oracle":
        critic: Critic = OracleCritic()
    elif kind == "remote":
        if client is None:
            client = ChatClient(
                os.environ.get("CRITIC_ENDPOINT", ""),
                model=os.environ.get("CRITIC_MODEL", "default"),
                api_key=os.environ.get("CRITIC_KEY"),
            )
        critic = RemoteCritic(client, expert=expert)
    else:
        raise ValueError(f"unknown critic kind {kind!r}")
    return DegradedCritic(critic, q) if q > 0 else critic
