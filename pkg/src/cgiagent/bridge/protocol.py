"""Wire format: one JSON object per line, strict request/response alternation.

Requests:  hello{protocol_version} | reset{task_id[, max_steps]} | step{task_id, action} | close
Responses: ack{protocol_version} | observation{text, score, done[, available_actions]} | error{message}
"""

from __future__ import annotations

import json
from typing import Any

from ..trajectory import Observation

PROTOCOL_VERSION = 1
REQUEST_TYPES = ("hello", "reset", "step", "close")
RESPONSE_TYPES = ("ack", "observation", "error")


class BridgeError(RuntimeError):
    pass


class ProtocolError(BridgeError):
    pass


class VersionMismatch(BridgeError):
    pass


class ConnectTimeout(BridgeError):
    pass


class EpisodeNotReset(BridgeError):
    pass


class RemoteEnvError(BridgeError):
    """The environment answered with an ``error`` message."""


def encode(msg: dict[str, Any]) -> bytes:
    return (json.dumps(msg, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes | str) -> dict[str, Any]:
    try:
        msg = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"invalid JSON: {exc}") from exc
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise ProtocolError(f"message without a type: {line!r}")
    return msg


def observation_message(obs: Observation, available_actions: list[str] | None = None) -> dict[str, Any]:
    msg: dict[str, Any] = {"type": "observation", "text": obs.text, "score": float(obs.score), "done": obs.done}
    if available_actions is not None:
        msg["available_actions"] = list(available_actions)
    return msg


def parse_observation(msg: dict[str, Any]) -> tuple[Observation, list[str] | None]:
    if msg.get("type") == "error":
        raise RemoteEnvError(str(msg.get("message", "unspecified environment error")))
    if msg.get("type") != "observation":
        raise ProtocolError(f"expected observation, got {msg.get('type')!r}")
    text, score, done = msg.get("text"), msg.get("score"), msg.get("done")
    if not isinstance(text, str):
        raise ProtocolError("observation missing string 'text'")
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise ProtocolError("observation missing numeric 'score'")
    if not 0.0 <= score <= 1.0:
        raise ProtocolError(f"score {score} outside [0, 1]")
    if not isinstance(done, bool):
        raise ProtocolError("observation missing boolean 'done'")
    actions = msg.get("available_actions")
    if actions is not None and not (isinstance(actions, list) and all(isinstance(a, str) for a in actions)):
        raise ProtocolError("'available_actions' must be a list of strings")
    return Observation(text=text, score=float(score), done=done), actions
