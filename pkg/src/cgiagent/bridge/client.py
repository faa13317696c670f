"""Bridge client: sessions over a child process's stdio or a TCP socket."""

from __future__ import annotations

import queue
import shlex
import socket
import subprocess
import threading
from typing import Any, Sequence

from ..trajectory import Observation
from .protocol import (
    PROTOCOL_VERSION,
    BridgeError,
    ConnectTimeout,
    EpisodeNotReset,
    ProtocolError,
    VersionMismatch,
    decode,
    encode,
    parse_observation,
)

DEFAULT_CONNECT_TIMEOUT = 10.0
DEFAULT_STEP_TIMEOUT = 120.0


class StdioTransport:
    def __init__(self, argv: Sequence[str]):
        self.proc = subprocess.Popen(
            list(argv),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        self._lines: queue.Queue[bytes | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def send(self, data: bytes) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"environment process is gone: {exc}") from exc

    def recv(self, timeout: float) -> bytes:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no response within {timeout}s") from None
        if line is None:
            raise BridgeError("environment process closed its output")
        return line

    def close(self) -> None:
        # stdout is left to the reader thread; closing it while a read is
        # pending would block until the child exits.
        try:
            if self.proc.stdin is not None:
                self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        self._reader.join(timeout=2)
        if self.proc.stdout is not None and not self._reader.is_alive():
            self.proc.stdout.close()


class SocketTransport:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectTimeout(f"cannot reach {host}:{port}: {exc}") from exc
        self._rfile = self.sock.makefile("rb")

    def send(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv(self, timeout: float) -> bytes:
        self.sock.settimeout(timeout)
        try:
            line = self._rfile.readline()
        except socket.timeout:
            raise TimeoutError(f"no response within {timeout}s") from None
        if not line:
            raise BridgeError("connection closed by environment")
        return line

    def close(self) -> None:
        self._rfile.close()
        self.sock.close()


class BridgeSession:
    """One live connection. Owned by a single worker; requests never overlap."""

    def __init__(self, transport, step_timeout: float = DEFAULT_STEP_TIMEOUT):
        self.transport = transport
        self.step_timeout = step_timeout
        self.protocol_version: int | None = None
        self.available_actions: list[str] | None = None
        self._reset: set[str] = set()
        self._lock = threading.Lock()

    def request(self, msg: dict[str, Any], timeout: float | None = None) -> dict[str, Any]:
        with self._lock:
            self.transport.send(encode(msg))
            try:
                line = self.transport.recv(self.step_timeout if timeout is None else timeout)
            except TimeoutError as exc:
                raise ProtocolError(str(exc)) from exc
            return decode(line)

    def handshake(self, timeout: float) -> None:
        try:
            reply = self.request({"type": "hello", "protocol_version": PROTOCOL_VERSION}, timeout)
        except (ProtocolError, BridgeError) as exc:
            raise ConnectTimeout(f"handshake failed: {exc}") from exc
        if reply.get("type") != "ack":
            raise ProtocolError(f"expected ack, got {reply.get('type')!r}")
        version = reply.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise VersionMismatch(f"server speaks protocol {version}, client speaks {PROTOCOL_VERSION}")
        self.protocol_version = version

    def _observe(self, reply: dict[str, Any]) -> Observation:
        obs, actions = parse_observation(reply)
        self.available_actions = actions
        return obs

    def reset(self, task_id: str, max_steps: int | None = None) -> Observation:
        msg: dict[str, Any] = {"type": "reset", "task_id": task_id}
        if max_steps is not None:
            msg["max_steps"] = max_steps
        obs = self._observe(self.request(msg))
        self._reset.add(task_id)
        return obs

    def step(self, task_id: str, action: str) -> Observation:
        if task_id not in self._reset:
            raise EpisodeNotReset(f"task {task_id} has not been reset on this session")
        return self._observe(self.request({"type": "step", "task_id": task_id, "action": action}))

    def close(self) -> None:
        try:
            self.request({"type": "close"}, timeout=2.0)
        except (BridgeError, OSError):
            pass
        finally:
            self.transport.close()

    def __enter__(self) -> "BridgeSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def bridge_connect(
    endpoint: str | Sequence[str],
    timeout: float = DEFAULT_CONNECT_TIMEOUT,
    step_timeout: float = DEFAULT_STEP_TIMEOUT,
) -> BridgeSession:
    """Open a session.

    ``endpoint`` is ``tcp://host:port``, ``stdio:<command line>``, or an argv list
    for a child process speaking the protocol on stdin/stdout.
    """
    if isinstance(endpoint, str) and endpoint.startswith("tcp://"):
        host, port = endpoint[len("tcp://"):].rsplit(":", 1)
        transport: Any = SocketTransport(host, int(port), timeout)
    else:
        argv = shlex.split(endpoint[len("stdio:"):]) if isinstance(endpoint, str) else list(endpoint)
        try:
            transport = StdioTransport(argv)
        except OSError as exc:
            raise ConnectTimeout(f"cannot start {argv!r}: {exc}") from exc
    session = BridgeSession(transport, step_timeout)
    try:
        session.handshake(timeout)
    except BaseException:
        transport.close()
        raise
    return session


def bridge_step(session: BridgeSession, task_id: str, action: str) -> Observation:
    return session.step(task_id, action)


class BridgeEnv:
    """Adapter giving a bridge session the same reset/step surface as CraftEnv."""

    def __init__(self, endpoint: str | Sequence[str], max_steps: int | None = None, timeout: float = DEFAULT_CONNECT_TIMEOUT):
        self.endpoint = endpoint
        self.max_steps = max_steps
        self.timeout = timeout
        self.session: BridgeSession | None = None
        self.task_id: str | None = None

    def reset(self, task, seed: int = 0) -> Observation:
        if self.session is None:
            self.session = bridge_connect(self.endpoint, self.timeout)
        self.task_id = task.task_id if hasattr(task, "task_id") else task.instruction.task_id
        return self.session.reset(self.task_id, self.max_steps)

    def step(self, command: str) -> Observation:
        assert self.session is not None and self.task_id is not None, "reset() first"
        return self.session.step(self.task_id, command)

    @property
    def available_actions(self) -> list[str] | None:
        return self.session.available_actions if self.session else None

    def close(self) -> None:
        if self.session is not None:
            self.session.close()
            self.session = None
