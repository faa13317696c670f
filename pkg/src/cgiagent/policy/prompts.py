"""Prompt assets keyed by environment id."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

from ..trajectory import Instruction, Step


class UnknownEnvPrompt(KeyError):
    pass


@dataclass(frozen=True)
class ChatTurn:
    role: str  # "system" | "human" | "assistant"
    content: str


# env_id -> asset family
_ENV_ASSETS: dict[str, str] = {
    "craftsim": "textcraft",
    "textcraft": "textcraft",
    "webshop": "webshop",
    "scienceworld": "scienceworld",
}


def register_env_prompt(env_id: str, family: str) -> None:
    """Route a (bridged) environment id to an existing prompt family."""
    if family not in set(_ENV_ASSETS.values()):
        raise UnknownEnvPrompt(family)
    _ENV_ASSETS[env_id] = family


@lru_cache(maxsize=None)
def load_asset(name: str) -> str:
    text = resources.files("cgiagent.assets").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return text.rstrip("\n")


def prompt_family(env_id: str) -> str:
    try:
        return _ENV_ASSETS[env_id]
    except KeyError:
        raise UnknownEnvPrompt(env_id) from None


def system_prompt(env_id: str) -> str:
    return load_asset(f"actor_{prompt_family(env_id)}")


def available_actions(env_id: str) -> str:
    return load_asset(f"actions_{prompt_family(env_id)}")


def render_actor_prompt(env_id: str, instruction: Instruction, steps: Sequence[Step] = ()) -> list[ChatTurn]:
    turns = [ChatTurn("system", system_prompt(env_id)), ChatTurn("human", instruction.text)]
    for step in steps:
        turns.append(ChatTurn("assistant", step.refined_action.raw))
        turns.append(ChatTurn("human", step.observation.text))
    return turns
