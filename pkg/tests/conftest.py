from __future__ import annotations

import json
import random
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from cgiagent.craftsim import CraftTask, Recipe, RecipeGraph, generate_tasks, plan
from cgiagent.craftsim.generator import instruction_text
from cgiagent.policy import ActorConfig, EpisodeContext
from cgiagent.trajectory import Instruction

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"
ECHO_ENV = [sys.executable, str(FIXTURES / "echo_env.py")]


def stick_task(task_id: str = "stick-1") -> CraftTask:
    """Hand-built depth-2 task: oak log -> oak planks -> stick, plus an unused table recipe."""
    graph = RecipeGraph(
        (
            Recipe("oak planks", 4, (("oak log", 1),)),
            Recipe("stick", 4, (("oak planks", 2),)),
            Recipe("crafting table", 1, (("oak planks", 4),)),
        ),
        frozenset({"oak log", "cobblestone"}),
    )
    instr = Instruction(task_id, "craftsim", instruction_text(graph.recipes, "stick"), tuple(plan(graph, "stick")))
    return CraftTask(instr, graph, "stick", 2)


def context_for(task: CraftTask, seed: int = 0, executed: tuple[str, ...] = ()) -> EpisodeContext:
    return EpisodeContext(
        instruction=task.instruction,
        rng=random.Random(seed),
        seed=seed,
        graph=task.graph,
        target=task.target,
        executed=executed,
        critic_rng=random.Random(seed + 1),
    )


@pytest.fixture
def stick() -> CraftTask:
    return stick_task()


@pytest.fixture(scope="session")
def depth2_tasks() -> list[CraftTask]:
    return generate_tasks(2, 2, 10, 11)


@pytest.fixture(scope="session")
def depth3_tasks() -> list[CraftTask]:
    return generate_tasks(3, 2, 20, 5)


@pytest.fixture
def scripted():
    def make(p: float, **kw) -> ActorConfig:
        return ActorConfig(fidelity=p, **kw)

    return make


class FakeChat:
    """Scripted HTTP backend: pops (status, body) pairs; records requests."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.requests.append((self.path, dict(self.headers), body))
                status, reply = outer.responses.pop(0) if outer.responses else (500, {})
                data = json.dumps(reply).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


def choices(*texts):
    return {"choices": [{"message": {"role": "assistant", "content": t}} for t in texts]}


@pytest.fixture
def fake_chat():
    servers = []

    def make(*responses):
        srv = FakeChat(responses)
        servers.append(srv)
        return srv

    yield make
    for s in servers:
        s.close()


# -- acceptance summary: one line per criterion at the end of the session -------

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {name}  ({detail})")
