import socket
import threading
import time
from contextlib import contextmanager

import httpx
import pytest
import uvicorn

from cuagent.service import NoDisplay, create_app


@contextmanager
def running_server(app):
    """Serve ``app`` with uvicorn on a free local port; yields the base URL."""
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{port}"
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.02)
    try:
        yield url
    finally:
        server.should_exit = True
        thread.join(10)


@pytest.fixture
def live_service(tmp_path):
    app = create_app(tmp_path / "work", NoDisplay((640, 480)))
    with running_server(app) as url:
        yield url


@pytest.fixture
def http_client(live_service):
    with httpx.Client(base_url=live_service, timeout=30) as client:
        yield client


# --------------------------------------------------------------------------- acceptance report

_ACCEPTANCE: list[str] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call":
        return
    name = marker.kwargs.get("criterion", item.name)
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    line = f"[{status}] {name}" + (f": {detail}" if detail else "")
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
