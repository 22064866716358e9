from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from lagsim.compiler import compile_machine
from lagsim.tm import initial_config, load_tm

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "lagsim" / "fixtures"

# (fixture name, start tape, head index)
MACHINES = {
    "one_step": ("0", 0),
    "increment": ("011", 2),
    "parity": ("10110", 0),
    "busy_beaver3": ("", 0),
}


def fixture_path(name: str) -> Path:
    return FIXTURES / f"{name}.tm"


@pytest.fixture(scope="session")
def machines():
    return {name: load_tm(fixture_path(name)) for name in MACHINES}


@pytest.fixture(scope="session")
def compiled(machines):
    return {name: compile_machine(m) for name, m in machines.items()}


@pytest.fixture(scope="session")
def reduced_bb(machines, compiled):
    m = machines["busy_beaver3"]
    c = compiled["busy_beaver3"]
    return c.reduce([c.encode_config(initial_config(m, "", 0))], 10_000)


class MockChat:
    """Chat-completions server that answers from a table of user message to reply.

    ``fail_first`` makes the first N requests return HTTP 500.
    """

    def __init__(self, replies: dict[str, str], fail_first: int = 0, status: int = 500):
        self.replies = replies
        self.fail_first = fail_first
        self.status = status
        self.requests: list[dict] = []
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                mock.requests.append({"body": body, "auth": self.headers.get("Authorization")})
                if len(mock.requests) <= mock.fail_first:
                    self.send_response(mock.status)
                    self.end_headers()
                    self.wfile.write(b"try again")
                    return
                user = body["messages"][-1]["content"]
                reply = mock.replies.get(user, "")
                data = json.dumps({"choices": [{"message": {"role": "assistant", "content": reply}}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def rule_table_replies(system, codebook) -> dict[str, str]:
    """User message to reply text for every rule of ``system``."""
    out = {}
    for lhs, rhs in system.table.items():
        user = " ".join(codebook.encode_string(lhs))
        out[user] = " ".join(codebook.encode_string([*rhs, codebook.halt]))
    return out


@pytest.fixture
def mock_chat():
    return MockChat


# -- acceptance summary ---------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status:<4} {detail}")
