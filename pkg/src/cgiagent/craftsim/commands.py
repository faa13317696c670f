"""Command grammar for the crafting environment.

    get <count?> <item>
    inventory
    craft <count?> <output> using <count?> <item> (, <count?> <item>)*

Keywords are case-insensitive; item names are lowercased and whitespace-collapsed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class UnparsableCommand(ValueError):
    def __init__(self, text: str):
        super().__init__(f"unparsable command: {text!r}")
        self.text = text


@dataclass(frozen=True)
class Get:
    item: str
    count: int = 1


@dataclass(frozen=True)
class Inventory:
    pass


@dataclass(frozen=True)
class Craft:
    output: str
    inputs: tuple[tuple[str, int], ...]
    count: int = 1


CraftCommand = Get | Inventory | Craft

_COUNTED = re.compile(r"^(?:(\d+)\s+)?(.+)$")
_GET = re.compile(r"^get\s+(.+)$", re.IGNORECASE)
_CRAFT = re.compile(r"^craft\s+(.+?)\s+using\s+(.+)$", re.IGNORECASE)


def normalize_item(name: str) -> str:
    return " ".join(name.split()).lower()


def _counted(text: str, original: str) -> tuple[str, int]:
    m = _COUNTED.match(text.strip())
    if m is None:
        raise UnparsableCommand(original)
    count = int(m.group(1)) if m.group(1) else 1
    item = normalize_item(m.group(2))
    if count < 1 or not item or item[0].isdigit():
        raise UnparsableCommand(original)
    return item, count


def parse_command(text: str) -> CraftCommand:
    cleaned = " ".join(text.strip().strip("\"'`").split())
    if not cleaned:
        raise UnparsableCommand(text)
    if cleaned.lower() == "inventory":
        return Inventory()
    m = _GET.match(cleaned)
    if m:
        item, count = _counted(m.group(1), text)
        return Get(item=item, count=count)
    m = _CRAFT.match(cleaned)
    if m:
        output, count = _counted(m.group(1), text)
        parts = [p for p in m.group(2).split(",")]
        if any(not p.strip() for p in parts):
            raise UnparsableCommand(text)
        inputs = tuple(_counted(p, text) for p in parts)
        if len({name for name, _ in inputs}) != len(inputs):
            raise UnparsableCommand(text)
        return Craft(output=output, inputs=inputs, count=count)
    raise UnparsableCommand(text)


def _fmt(item: str, count: int) -> str:
    return item if count == 1 else f"{count} {item}"


def format_command(cmd: CraftCommand) -> str:
    """Render a command; counts of 1 are omitted."""
    if isinstance(cmd, Inventory):
        return "inventory"
    if isinstance(cmd, Get):
        return f"get {_fmt(cmd.item, cmd.count)}"
    ingredients = ", ".join(_fmt(name, n) for name, n in cmd.inputs)
    return f"craft {_fmt(cmd.output, cmd.count)} using {ingredients}"


def canonical(text: str) -> str:
    """Normalized form used for command equality; falls back to whitespace/case folding."""
    try:
        cmd = parse_command(text)
    except UnparsableCommand:
        return " ".join(text.split()).lower()
    if isinstance(cmd, Craft):
        cmd = Craft(output=cmd.output, inputs=tuple(sorted(cmd.inputs)), count=cmd.count)
    return format_command(cmd)
