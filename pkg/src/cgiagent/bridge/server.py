"""Bridge server loop, plus a craftsim host usable as a loopback endpoint.

    python -m cgiagent.bridge.server --tasks tasks.json            # stdio
    python -m cgiagent.bridge.server --tasks tasks.json --tcp 127.0.0.1:7001
"""

from __future__ import annotations

import argparse
import socketserver
import sys
from typing import BinaryIO, Protocol

from ..craftsim.env import CraftEnv
from ..craftsim.generator import load_tasks
from ..trajectory import Observation
from .protocol import PROTOCOL_VERSION, ProtocolError, decode, encode, observation_message


class EnvHandler(Protocol):
    def reset(self, task_id: str, max_steps: int | None = None) -> Observation: ...

    def step(self, task_id: str, action: str) -> Observation: ...


class CraftHandler:
    def __init__(self, tasks):
        self.tasks = {t.task_id: t for t in tasks}
        self.envs: dict[str, CraftEnv] = {}

    def reset(self, task_id: str, max_steps: int | None = None) -> Observation:
        if task_id not in self.tasks:
            raise KeyError(f"unknown task {task_id}")
        env = CraftEnv(max_steps=max_steps)
        self.envs[task_id] = env
        return env.reset(self.tasks[task_id])

    def step(self, task_id: str, action: str) -> Observation:
        if task_id not in self.envs:
            raise KeyError(f"task {task_id} was not reset")
        return self.envs[task_id].step(action)


def handle(msg: dict, handler: EnvHandler, version: int = PROTOCOL_VERSION) -> tuple[dict, bool]:
    """Answer one request. Returns (response, keep_open)."""
    kind = msg.get("type")
    try:
        if kind == "hello":
            return {"type": "ack", "protocol_version": version}, True
        if kind == "close":
            return {"type": "ack", "protocol_version": version}, False
        if kind == "reset":
            obs = handler.reset(str(msg["task_id"]), msg.get("max_steps"))
            return observation_message(obs), True
        if kind == "step":
            obs = handler.step(str(msg["task_id"]), str(msg["action"]))
            return observation_message(obs), True
    except Exception as exc:  # environment faults are reported in-band
        return {"type": "error", "message": f"{type(exc).__name__}: {exc}"}, True
    return {"type": "error", "message": f"unknown message type {kind!r}"}, True


def serve(handler: EnvHandler, rfile: BinaryIO, wfile: BinaryIO, version: int = PROTOCOL_VERSION) -> None:
    for line in rfile:
        if not line.strip():
            continue
        try:
            msg = decode(line)
        except ProtocolError as exc:
            wfile.write(encode({"type": "error", "message": str(exc)}))
            wfile.flush()
            continue
        response, keep_open = handle(msg, handler, version)
        wfile.write(encode(response))
        wfile.flush()
        if not keep_open:
            break


def serve_tcp(make_handler, host: str, port: int) -> socketserver.ThreadingTCPServer:
    class _Conn(socketserver.StreamRequestHandler):
        def handle(self) -> None:
            serve(make_handler(), self.rfile, self.wfile)

    socketserver.ThreadingTCPServer.allow_reuse_address = True
    return socketserver.ThreadingTCPServer((host, port), _Conn)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="cgiagent-bridge", description="Host craftsim tasks over the bridge protocol.")
    ap.add_argument("--tasks", required=True)
    ap.add_argument("--tcp", metavar="HOST:PORT")
    args = ap.parse_args(argv)
    tasks = load_tasks(args.tasks)
    if args.tcp:
        host, port = args.tcp.rsplit(":", 1)
        with serve_tcp(lambda: CraftHandler(tasks), host, int(port)) as srv:
            srv.serve_forever()
        return 0
    serve(CraftHandler(tasks), sys.stdin.buffer, sys.stdout.buffer)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
