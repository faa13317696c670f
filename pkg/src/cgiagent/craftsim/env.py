"""Deterministic crafting environment.

Reward is binary: score becomes 1.0 the step the target is crafted and the
episode ends. Invalid commands never raise; they produce a "Could not ..."
observation and still consume a step.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Mapping

from ..trajectory import AgentAction, Instruction, Observation
from .commands import Craft, Get, Inventory, UnparsableCommand, parse_command
from .graph import Recipe, RecipeGraph


class SteppedAfterDone(RuntimeError):
    pass


@dataclass(frozen=True)
class CraftTask:
    instruction: Instruction
    graph: RecipeGraph
    target: str
    depth: int

    @property
    def task_id(self) -> str:
        return self.instruction.task_id


@dataclass(frozen=True)
class CraftState:
    inventory: tuple[tuple[str, int], ...]
    target: str
    step_count: int = 0
    done: bool = False
    score: float = 0.0
    max_steps: int | None = None
    crafted: frozenset[str] = field(default_factory=frozenset)

    @property
    def counts(self) -> Counter[str]:
        return Counter(dict(self.inventory))


def default_max_steps(oracle_length: int | None) -> int:
    return max(10, 4 * (oracle_length or 0))


def _freeze(inv: Mapping[str, int]) -> tuple[tuple[str, int], ...]:
    return tuple(sorted((k, v) for k, v in inv.items() if v > 0))


def render_inventory(inventory: Mapping[str, int]) -> str:
    items = _freeze(inventory)
    if not items:
        return "Inventory: You are not carrying anything."
    return "Inventory: " + " ".join(f"[{name}] ({n})" for name, n in items)


def env_reset(task: CraftTask, seed: int = 0, max_steps: int | None = None) -> tuple[CraftState, Observation]:
    # The environment has no stochastic element; seed is accepted for interface parity.
    del seed
    if max_steps is None:
        max_steps = default_max_steps(task.instruction.oracle_length)
    state = CraftState(inventory=(), target=task.target, max_steps=max_steps)
    return state, Observation(text=f"Goal: craft {task.target}.", score=0.0, done=False)


def match_recipe(graph: RecipeGraph, cmd: Craft) -> tuple[Recipe, list[tuple[str, str, int]]] | None:
    """Find the recipe a craft command refers to.

    Returns the recipe plus, per recipe input, ``(recipe_input, named_source, count)``
    where ``named_source`` is what the command named (a concrete item or the tag).
    Command counts are advisory; the recipe's counts govern consumption.
    """
    named = [name for name, _ in cmd.inputs]
    for recipe in graph.recipes_for(cmd.output):
        if len(recipe.inputs) != len(named):
            continue
        remaining = list(named)
        pairing: list[tuple[str, str, int]] = []
        for inp, n in recipe.inputs:
            allowed = {inp} | graph.expand(inp)
            hit = next((x for x in remaining if x in allowed), None)
            if hit is None:
                break
            remaining.remove(hit)
            pairing.append((inp, hit, n))
        else:
            return recipe, pairing
    return None


def _consume(graph: RecipeGraph, inv: Counter[str], pairing: list[tuple[str, str, int]]) -> bool:
    """Remove recipe inputs from ``inv`` in place; False (inv untouched) if not covered."""
    trial = inv.copy()
    for inp, source, n in pairing:
        pool = sorted(graph.expand(source)) if source in graph.tags else [source]
        need = n
        for item in pool:
            take = min(need, trial[item])
            trial[item] -= take
            need -= take
            if need == 0:
                break
        if need:
            return False
    inv.clear()
    inv.update({k: v for k, v in trial.items() if v > 0})
    return True


def apply_command(state: CraftState, graph: RecipeGraph, text: str) -> tuple[CraftState, str, bool]:
    """Pure transition core shared by the environment and the critics.

    Returns (new state, message, succeeded). Does not touch step_count/done.
    """
    try:
        cmd = parse_command(text)
    except UnparsableCommand:
        return state, f"Could not execute {text.strip()}", False
    inv = state.counts
    if isinstance(cmd, Inventory):
        return state, render_inventory(inv), True
    if isinstance(cmd, Get):
        if cmd.item not in graph.base_items:
            return state, f"Could not find {cmd.item}", False
        inv[cmd.item] += cmd.count
        return replace(state, inventory=_freeze(inv)), f"Got {cmd.count} {cmd.item}", True
    match = match_recipe(graph, cmd)
    if match is None:
        return state, f"Could not find a valid recipe for {cmd.output}", False
    recipe, pairing = match
    if not _consume(graph, inv, pairing):
        return state, f"Could not find enough items to craft {cmd.output}", False
    inv[recipe.output] += recipe.output_count
    new = replace(state, inventory=_freeze(inv), crafted=state.crafted | {recipe.output})
    return new, f"Crafted {recipe.output_count} {recipe.output}", True


def env_step(state: CraftState, graph: RecipeGraph, action: AgentAction | str) -> tuple[CraftState, Observation]:
    if state.done:
        raise SteppedAfterDone("episode already finished")
    text = action.command if isinstance(action, AgentAction) else action
    new, message, _ = apply_command(state, graph, text)
    steps = state.step_count + 1
    score = state.score
    done = False
    if new.counts[state.target] > 0:
        score, done = 1.0, True
    elif state.max_steps is not None and steps >= state.max_steps:
        done = True
    new = replace(new, step_count=steps, score=score, done=done)
    return new, Observation(text=message, score=score, done=done)


def progress_fraction(graph: RecipeGraph, state: CraftState) -> float:
    """Share of the target's craftable ancestors crafted so far; metrics only."""
    needed = graph.ancestors(state.target)
    if not needed:
        return 1.0 if state.score >= 1.0 else 0.0
    return len(needed & state.crafted) / len(needed)


class CraftEnv:
    """Single-episode stateful wrapper around :func:`env_reset` / :func:`env_step`."""

    def __init__(self, max_steps: int | None = None):
        self.max_steps = max_steps
        self.task: CraftTask | None = None
        self.state: CraftState | None = None

    def reset(self, task: CraftTask, seed: int = 0) -> Observation:
        self.task = task
        self.state, obs = env_reset(task, seed, self.max_steps)
        return obs

    def step(self, command: str) -> Observation:
        assert self.task is not None and self.state is not None, "reset() first"
        self.state, obs = env_step(self.state, self.task.graph, command)
        return obs

    def close(self) -> None:
        pass
