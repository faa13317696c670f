"""Gold-path planner for crafting tasks."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from .commands import Craft, Get, canonical, format_command
from .env import CraftState, apply_command
from .graph import RecipeGraph


class UnsolvableTask(ValueError):
    pass


def _concrete(graph: RecipeGraph, name: str) -> str:
    members = graph.expand(name)
    if len(members) == 1:
        return next(iter(members))
    based = sorted(m for m in members if m in graph.base_items)
    return based[0] if based else sorted(members)[0]


def plan(graph: RecipeGraph, target: str) -> list[str]:
    """Get every base item once (with its total count), then craft bottom-up.

    Each craftable item is crafted ceil(demand / output_count) times using its
    first recipe; tag inputs resolve to the first base member (sorted).
    """
    if not graph.known(target) or target in graph.tags:
        raise UnsolvableTask(f"unknown target {target!r}")
    need: Counter[str] = Counter({target: 1})
    batches: dict[str, int] = {}
    for item in reversed(graph.topological_order):
        if need[item] == 0:
            continue
        if item in graph.base_items:
            continue
        recipes = graph.recipes_for(item)
        if not recipes:
            raise UnsolvableTask(f"no recipe produces {item!r}")
        recipe = recipes[0]
        n = math.ceil(need[item] / recipe.output_count)
        batches[item] = n
        for name, count in recipe.inputs:
            need[_concrete(graph, name)] += n * count
    gets = [format_command(Get(item, need[item])) for item in sorted(graph.base_items) if need[item] > 0]
    crafts: list[str] = []
    for item in graph.topological_order:
        if item not in batches:
            continue
        recipe = graph.recipes_for(item)[0]
        cmd = Craft(
            output=item,
            inputs=tuple((_concrete(graph, name), count) for name, count in recipe.inputs),
            count=recipe.output_count,
        )
        crafts.extend([format_command(cmd)] * batches[item])
    return gets + crafts


def oracle_solve(task) -> list[str]:
    return plan(task.graph, task.target)


def gold_progress(
    gold_path: Sequence[str],
    executed: Sequence[str],
    graph: RecipeGraph | None = None,
    target: str | None = None,
) -> tuple[int, CraftState | None]:
    """How many gold steps the executed commands have accomplished, in order.

    An executed command advances the pointer when it matches the next gold
    step canonically or, with a graph, has the same effect on the inventory.
    Off-path commands leave the pointer where it is. Returns the pointer and
    the replayed state (None without a graph).
    """
    pointer = 0
    state = CraftState(inventory=(), target=target or "") if graph is not None else None
    for cmd in executed:
        nxt = gold_path[pointer] if pointer < len(gold_path) else None
        if graph is None or state is None:
            if nxt is not None and canonical(cmd) == canonical(nxt):
                pointer += 1
            continue
        after, _, ok = apply_command(state, graph, cmd)
        if nxt is not None and ok:
            if canonical(cmd) == canonical(nxt):
                pointer += 1
            else:
                gold_after, _, gold_ok = apply_command(state, graph, nxt)
                if gold_ok and gold_after.inventory == after.inventory:
                    pointer += 1
        state = after
    return pointer, state
