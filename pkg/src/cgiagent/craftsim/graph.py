"""Recipe graphs: items, crafting rules and generic-ingredient tags."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from graphlib import CycleError, TopologicalSorter
from typing import Any, Mapping

from .commands import normalize_item


class InvalidGraph(ValueError):
    pass


@dataclass(frozen=True)
class Recipe:
    output: str
    output_count: int
    inputs: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "output", normalize_item(self.output))
        object.__setattr__(
            self, "inputs", tuple((normalize_item(name), int(n)) for name, n in self.inputs)
        )
        if self.output_count < 1:
            raise InvalidGraph(f"{self.output}: output_count must be positive")
        if not self.inputs:
            raise InvalidGraph(f"{self.output}: recipe needs at least one input")
        if any(n < 1 for _, n in self.inputs):
            raise InvalidGraph(f"{self.output}: input counts must be positive")
        if self.output in {name for name, _ in self.inputs}:
            raise InvalidGraph(f"{self.output}: recipe consumes its own output")

    def to_dict(self) -> dict[str, Any]:
        return {
            "output": self.output,
            "output_count": self.output_count,
            "inputs": [[name, n] for name, n in self.inputs],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Recipe":
        return cls(d["output"], int(d["output_count"]), tuple((n, int(c)) for n, c in d["inputs"]))


@dataclass(frozen=True)
class RecipeGraph:
    """Immutable crafting DAG.

    ``tags`` maps a generic ingredient name (e.g. ``planks``) to the concrete
    items that may stand in for it.
    """

    recipes: tuple[Recipe, ...]
    base_items: frozenset[str]
    tags: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "recipes", tuple(self.recipes))
        object.__setattr__(self, "base_items", frozenset(normalize_item(b) for b in self.base_items))
        object.__setattr__(
            self,
            "tags",
            {normalize_item(t): frozenset(normalize_item(i) for i in items) for t, items in self.tags.items()},
        )
        self.validate()

    # -- structure ----------------------------------------------------------

    def validate(self) -> None:
        for tag, members in self.tags.items():
            if not members:
                raise InvalidGraph(f"tag {tag!r} has no members")
            if tag in members:
                raise InvalidGraph(f"tag {tag!r} lists itself")
        produced = {r.output for r in self.recipes}
        for r in self.recipes:
            for name, _ in r.inputs:
                for concrete in self.expand(name):
                    if concrete not in produced and concrete not in self.base_items:
                        raise InvalidGraph(f"input {concrete!r} of {r.output!r} is unobtainable")
        try:
            self.topological_order
        except CycleError as exc:
            raise InvalidGraph(f"recipe graph has a cycle: {exc.args[1]}") from exc

    def expand(self, name: str) -> frozenset[str]:
        """Concrete items satisfying ``name`` (itself, or a tag's members)."""
        return self.tags.get(name, frozenset((name,)))

    @cached_property
    def dependencies(self) -> dict[str, frozenset[str]]:
        deps: dict[str, set[str]] = {b: set() for b in self.base_items}
        for r in self.recipes:
            slot = deps.setdefault(r.output, set())
            for name, _ in r.inputs:
                slot.update(self.expand(name))
        for members in self.tags.values():
            for m in members:
                deps.setdefault(m, set())
        return {k: frozenset(v) for k, v in deps.items()}

    @cached_property
    def topological_order(self) -> tuple[str, ...]:
        """Items ordered so every item follows everything it is crafted from."""
        ts = TopologicalSorter({k: sorted(v) for k, v in sorted(self.dependencies.items())})
        return tuple(ts.static_order())

    @cached_property
    def items(self) -> frozenset[str]:
        return frozenset(self.dependencies)

    def known(self, name: str) -> bool:
        return name in self.items or name in self.tags

    def recipes_for(self, output: str) -> tuple[Recipe, ...]:
        return tuple(r for r in self.recipes if r.output == output)

    def depth(self, item: str) -> int:
        """Longest recipe chain from base items to ``item`` (base items have depth 0)."""
        memo: dict[str, int] = {}
        for name in self.topological_order:
            recipes = self.recipes_for(name)
            if name in self.base_items or not recipes:
                memo[name] = 0
            else:
                memo[name] = max(
                    1 + max(memo[c] for inp, _ in r.inputs for c in self.expand(inp)) for r in recipes
                )
        return memo[item]

    def ancestors(self, item: str) -> frozenset[str]:
        """Craftable (non-base) items the target transitively depends on, target included."""
        seen: set[str] = set()
        stack = [item]
        while stack:
            cur = stack.pop()
            if cur in seen or cur in self.base_items:
                continue
            seen.add(cur)
            stack.extend(self.dependencies.get(cur, ()))
        return frozenset(seen)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "recipes": [r.to_dict() for r in self.recipes],
            "base_items": sorted(self.base_items),
            "tags": {t: sorted(m) for t, m in sorted(self.tags.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RecipeGraph":
        return cls(
            recipes=tuple(Recipe.from_dict(r) for r in d["recipes"]),
            base_items=frozenset(d["base_items"]),
            tags={t: frozenset(m) for t, m in d.get("tags", {}).items()},
        )

