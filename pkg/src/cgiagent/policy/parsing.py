"""Parsing of ``Thought: ... Action: ...`` model outputs."""

from __future__ import annotations

import re

from ..trajectory import AgentAction

_LINE_MARKER = re.compile(r"^[ \t]*action[ \t]*:", re.IGNORECASE | re.MULTILINE)
_INLINE_MARKER = re.compile(r"action[ \t]*:", re.IGNORECASE)
_THOUGHT = re.compile(r"^\s*thought\s*:", re.IGNORECASE)

FALLBACK_COMMAND = "noop"


class NoActionMarker(ValueError):
    """Raised when no ``Action:`` marker exists; ``action`` holds the whole-text fallback."""

    def __init__(self, raw: str):
        super().__init__("no 'Action:' marker in model output")
        command = _strip(raw) or FALLBACK_COMMAND
        self.action = AgentAction(thought="", command=command, raw=raw)


def _strip(text: str) -> str:
    return text.strip().strip("\"'`").strip()


def parse_thought_action(raw: str) -> AgentAction:
    marks = list(_LINE_MARKER.finditer(raw)) or list(_INLINE_MARKER.finditer(raw))
    if not marks:
        raise NoActionMarker(raw)
    last = marks[-1]
    command = _strip(raw[last.end():])
    head = raw[: last.start()]
    thought = _THOUGHT.sub("", head, count=1).strip()
    if not command:
        raise NoActionMarker(raw)
    return AgentAction(thought=thought, command=command, raw=raw)


def parse_lenient(raw: str) -> tuple[AgentAction, bool]:
    """Like :func:`parse_thought_action` but never raises; second item is False when flagged."""
    try:
        return parse_thought_action(raw), True
    except NoActionMarker as exc:
        return exc.action, False
