from .actors import (
    DEFAULT_M,
    Actor,
    ActorConfig,
    EpisodeContext,
    NoCritiques,
    RemoteActor,
    ScriptedActor,
    make_actor,
    refine_action,
    render_refine_turn,
    sample_candidates,
    scripted_refine,
)
from .chat import BackendUnavailable, ChatClient
from .parsing import NoActionMarker, parse_lenient, parse_thought_action
from .prompts import ChatTurn, UnknownEnvPrompt, available_actions, register_env_prompt, render_actor_prompt, system_prompt

__all__ = [
    "DEFAULT_M",
    "Actor",
    "ActorConfig",
    "BackendUnavailable",
    "ChatClient",
    "ChatTurn",
    "EpisodeContext",
    "NoActionMarker",
    "NoCritiques",
    "RemoteActor",
    "ScriptedActor",
    "UnknownEnvPrompt",
    "available_actions",
    "make_actor",
    "parse_lenient",
    "parse_thought_action",
    "refine_action",
    "register_env_prompt",
    "render_actor_prompt",
    "render_refine_turn",
    "sample_candidates",
    "scripted_refine",
    "system_prompt",
]
