"""Procedural crafting-task generator."""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Any, Iterable

from ..trajectory import Instruction
from .commands import Craft, format_command
from .env import CraftEnv, CraftTask
from .graph import Recipe, RecipeGraph
from .solver import plan

ENV_ID = "craftsim"

MATERIALS = (
    "oak", "birch", "spruce", "jungle", "acacia", "crimson", "warped", "iron",
    "gold", "copper", "stone", "diamond", "quartz", "emerald", "amber", "cobalt",
)
FORMS = (
    "log", "planks", "ingot", "nugget", "block", "slab", "stairs", "fence", "door",
    "rod", "gear", "plate", "wire", "lantern", "chest", "button", "lever", "hoe",
    "pickaxe", "torch", "bucket", "bowl", "frame", "beam", "shard", "dust",
)

MAX_ATTEMPTS = 100


class GenerationOverflow(RuntimeError):
    pass


def recipe_line(recipe: Recipe) -> str:
    return format_command(Craft(recipe.output, recipe.inputs, recipe.output_count))


def instruction_text(recipes: Iterable[Recipe], target: str) -> str:
    lines = "\n".join(recipe_line(r) for r in recipes)
    return f"Crafting commands:\n{lines}\n\nGoal: craft {target}."


class _Builder:
    def __init__(self, rng: random.Random, branching: int, tag_prob: float, reuse_prob: float):
        self.rng = rng
        self.branching = branching
        self.tag_prob = tag_prob
        self.reuse_prob = reuse_prob
        names = [f"{m} {f}" for m in MATERIALS for f in FORMS]
        rng.shuffle(names)
        self.names = names
        self.used_forms: set[str] = set()
        self.recipes: list[Recipe] = []
        self.base: set[str] = set()
        self.tags: dict[str, frozenset[str]] = {}
        self.by_depth: dict[int, list[str]] = {}

    def fresh(self) -> str:
        if not self.names:
            raise GenerationOverflow("item name pool exhausted")
        return self.names.pop()

    def make(self, level: int) -> str:
        if level == 0:
            name = self.fresh()
            self.base.add(name)
            self.by_depth.setdefault(0, []).append(name)
            return name
        name = self.fresh()
        k = self.rng.randint(1, self.branching)
        inputs = [self.make(level - 1)]
        for _ in range(k - 1):
            inputs.append(self.side_input(level, exclude=inputs))
        counts = [self.rng.randint(1, 2) for _ in inputs]
        out = self.rng.choice((1, 1, 2, 4))
        self.recipes.append(Recipe(name, out, tuple(zip(inputs, counts))))
        self.by_depth.setdefault(level, []).append(name)
        return name

    def side_input(self, level: int, exclude: list[str]) -> str:
        lvl = self.rng.randint(0, level - 1)
        pool = [x for x in self.by_depth.get(lvl, []) if x not in exclude]
        if pool and self.rng.random() < self.reuse_prob:
            return self.rng.choice(sorted(pool))
        if lvl == 0 and self.rng.random() < self.tag_prob:
            tag = self.tag_group()
            if tag is not None and tag not in exclude:
                return tag
        return self.make(lvl)

    def tag_group(self) -> str | None:
        forms = [f for f in FORMS if f not in self.used_forms]
        if not forms:
            return None
        form = self.rng.choice(forms)
        members = [n for n in self.names if n.endswith(" " + form)][:2]
        if len(members) < 2:
            return None
        for m in members:
            self.names.remove(m)
            self.base.add(m)
        self.used_forms.add(form)
        self.tags[form] = frozenset(members)
        return form


def _build_task(rng: random.Random, depth: int, branching: int, task_id: str, tag_prob: float, reuse_prob: float) -> CraftTask:
    b = _Builder(rng, branching, tag_prob, reuse_prob)
    target = b.make(depth)
    graph = RecipeGraph(tuple(b.recipes), frozenset(b.base), dict(b.tags))
    if graph.depth(target) != depth:
        raise GenerationOverflow(f"built depth {graph.depth(target)} != {depth}")
    listing = list(graph.recipes)
    rng.shuffle(listing)
    gold = plan(graph, target)
    instr = Instruction(
        task_id=task_id,
        env_id=ENV_ID,
        text=instruction_text(listing, target),
        gold_path=tuple(gold),
    )
    return CraftTask(instruction=instr, graph=graph, target=target, depth=depth)


def replay_gold(task: CraftTask) -> float:
    env = CraftEnv(max_steps=None)
    env.reset(task)
    obs = None
    for cmd in task.instruction.gold_path or ():
        obs = env.step(cmd)
    return obs.score if obs is not None else 0.0


def generate_tasks(
    depth: int,
    branching: int,
    count: int,
    seed: int,
    *,
    tag_prob: float = 0.0,
    reuse_prob: float = 0.3,
) -> list[CraftTask]:
    if depth < 1 or branching < 1 or count < 1:
        raise ValueError("depth, branching and count must be >= 1")
    tasks = []
    for i in range(count):
        task_id = f"craft-d{depth}b{branching}-s{seed}-{i:04d}"
        for attempt in range(MAX_ATTEMPTS):
            rng = random.Random(f"{seed}:{depth}:{branching}:{i}:{attempt}")
            try:
                task = _build_task(rng, depth, branching, task_id, tag_prob, reuse_prob)
            except GenerationOverflow:
                continue
            if replay_gold(task) == 1.0:
                tasks.append(task)
                break
        else:
            raise GenerationOverflow(f"could not build task {task_id} in {MAX_ATTEMPTS} attempts")
    return tasks


# -- task set files ------------------------------------------------------------


def task_to_dict(task: CraftTask) -> dict[str, Any]:
    g = task.graph.to_dict()
    return {
        "task_id": task.task_id,
        "target": task.target,
        "recipes": g["recipes"],
        "base_items": g["base_items"],
        "tags": g["tags"],
        "gold_path": list(task.instruction.gold_path or ()),
        "depth": task.depth,
        "instruction": task.instruction.text,
    }


def task_from_dict(d: dict[str, Any]) -> CraftTask:
    graph = RecipeGraph.from_dict(d)
    gold = d.get("gold_path")
    text = d.get("instruction") or instruction_text(graph.recipes, d["target"])
    instr = Instruction(
        task_id=d["task_id"],
        env_id=d.get("env_id", ENV_ID),
        text=text,
        gold_path=tuple(gold) if gold else None,
    )
    return CraftTask(instruction=instr, graph=graph, target=d["target"], depth=int(d["depth"]))


def dumps_tasks(tasks: Iterable[CraftTask]) -> str:
    return json.dumps({"tasks": [task_to_dict(t) for t in tasks]}, indent=2, ensure_ascii=False) + "\n"


def save_tasks(tasks: Iterable[CraftTask], path: str | Path) -> None:
    Path(path).write_text(dumps_tasks(tasks), encoding="utf-8")


def load_tasks(path: str | Path) -> list[CraftTask]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [task_from_dict(d) for d in data["tasks"]]
