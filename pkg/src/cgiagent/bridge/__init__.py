from .client import BridgeEnv, BridgeSession, bridge_connect, bridge_step
from .protocol import (
    PROTOCOL_VERSION,
    BridgeError,
    ConnectTimeout,
    EpisodeNotReset,
    ProtocolError,
    RemoteEnvError,
    VersionMismatch,
)
from .server import CraftHandler, serve, serve_tcp

__all__ = [
    "PROTOCOL_VERSION",
    "BridgeEnv",
    "BridgeError",
    "BridgeSession",
    "ConnectTimeout",
    "CraftHandler",
    "EpisodeNotReset",
    "ProtocolError",
    "RemoteEnvError",
    "VersionMismatch",
    "bridge_connect",
    "bridge_step",
    "serve",
    "serve_tcp",
]
