import base64
import json
import threading

import httpx
import pytest
from fastapi.testclient import TestClient

from cuagent.environment import HttpEnvironment, RetryingSession
from cuagent.errors import (
    EnvironmentUnreachable,
    MalformedAction,
    OutOfBounds,
    SessionBusy,
    SessionExpired,
    TransportError,
    UnknownSnapshot,
)
from cuagent.png import solid_png
from cuagent.protocol import Click, CodeAction, Hotkey, Screenshot, Terminate
from cuagent.service import NoDisplay, SimDisplay, create_app

PNG = base64.b64encode(solid_png(64, 48)).decode()
SHOT = {"screenshot": PNG, "screenshot_placeholder": False}


class Recorder:
    """Stub server: records requests and answers from a table of (status, json)."""

    def __init__(self, responses=None):
        self.requests: list[httpx.Request] = []
        self.responses = responses or {}

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(request)
        status, body = self.responses.get(request.url.path, (200, SHOT))
        return httpx.Response(status, json=body)

    def env(self, **kwargs):
        client = httpx.Client(base_url="http://stub", transport=httpx.MockTransport(self))
        return HttpEnvironment(client=client, session_id="s1", **kwargs)


def test_hotkey_posts_documented_body():
    rec = Recorder()
    env = rec.env(screen=(64, 48))
    obs = env.perform_action(Hotkey(("ctrl", "s")))
    assert len(rec.requests) == 1
    req = rec.requests[0]
    assert (req.method, req.url.path) == ("POST", "/action")
    assert json.loads(req.content) == {"type": "hotkey", "keys": ["ctrl", "s"]}
    assert req.headers["X-Session-Id"] == "s1"
    assert obs.screenshot.size == (64, 48) and obs.text == ""


def test_screenshot_decodes_with_declared_dimensions():
    rec = Recorder()
    env = rec.env()
    shot = env.capture_screenshot().screenshot
    assert isinstance(shot, Screenshot) and shot.size == (64, 48)
    assert env.screen == (64, 48)
    assert len(rec.requests) == 1


def test_execute_roundtrip_body():
    body = {**SHOT, "exit_code": 0, "stdout": "hi\n", "stderr": "", "timed_out": False,
            "stdout_truncated": False, "stderr_truncated": False, "duration": 0.01}
    rec = Recorder({"/execute": (200, body)})
    result, obs = rec.env().execute_script(CodeAction("bash", "echo hi"), 7)
    assert json.loads(rec.requests[0].content) == {"language": "bash", "code": "echo hi", "timeout_s": 7}
    assert result.stdout == "hi\n" and obs.text == "exit_code=0"


@pytest.mark.parametrize("path,status,exc,call", [
    ("/screenshot", 409, SessionBusy, lambda e: e.capture_screenshot()),
    ("/screenshot", 410, SessionExpired, lambda e: e.capture_screenshot()),
    ("/screenshot", 500, TransportError, lambda e: e.capture_screenshot()),
    ("/reset", 404, UnknownSnapshot, lambda e: e.reset("x")),
    ("/action", 400, MalformedAction, lambda e: e.perform_action(Click(1, 1))),
    ("/action", 501, EnvironmentUnreachable, lambda e: e.perform_action(Click(1, 1))),
])
def test_status_mapping(path, status, exc, call):
    rec = Recorder({path: (status, {"error": "nope"})})
    with pytest.raises(exc):
        call(rec.env())
    assert len(rec.requests) == 1  # no hidden retries


def test_network_failure_is_transport_error():
    def boom(request):
        raise httpx.ConnectError("refused")

    env = HttpEnvironment(client=httpx.Client(base_url="http://x", transport=httpx.MockTransport(boom)))
    with pytest.raises(TransportError):
        env.capture_screenshot()


def test_client_side_validation():
    rec = Recorder()
    env = rec.env(screen=(64, 48))
    with pytest.raises(OutOfBounds):
        env.perform_action(Click(100, 1))
    with pytest.raises(MalformedAction):
        env.perform_action(Terminate("x"))
    assert rec.requests == []


def test_overlapping_operations_rejected():
    gate = threading.Event()
    released = threading.Event()

    def slow(request):
        gate.set()
        released.wait(5)
        return httpx.Response(200, json=SHOT)

    env = HttpEnvironment(client=httpx.Client(base_url="http://x", transport=httpx.MockTransport(slow)))
    t = threading.Thread(target=env.capture_screenshot)
    t.start()
    gate.wait(5)
    with pytest.raises(SessionBusy):
        env.capture_screenshot()
    released.set()
    t.join()
    env.capture_screenshot()


def test_retrying_session_policy():
    calls = {"n": 0}

    def flaky(request):
        calls["n"] += 1
        if calls["n"] < 3:
            return httpx.Response(502, json={"error": "bad gateway"})
        return httpx.Response(200, json=SHOT)

    env = HttpEnvironment(client=httpx.Client(base_url="http://x", transport=httpx.MockTransport(flaky)))
    delays = []
    wrapped = RetryingSession(env, attempts=3, backoff=0.1, sleep=delays.append)
    wrapped.capture_screenshot()
    assert calls["n"] == 3 and delays == [0.1, 0.2]

    calls["n"] = 0
    with pytest.raises(TransportError):
        wrapped.perform_action(Click(1, 1))
    assert calls["n"] == 1  # side-effecting operations are never retried


def test_against_real_service_with_sim_display(tmp_path):
    display = SimDisplay("desktop", screen=(800, 600))
    with TestClient(create_app(tmp_path, display)) as client:
        env = HttpEnvironment(client=client)
        assert env.screen == (800, 600)
        env.perform_action(Click(120, 230))
        assert display.desktop.state.focused.title == "Files"
        result, _ = env.execute_script(CodeAction("python", "open('a.txt', 'w').write('hello')"))
        assert result.exit_code == 0
        assert env.read_file(str(tmp_path / "default" / "a.txt")) == b"hello"
        assert env.file_md5(str(tmp_path / "default" / "a.txt")) == "5d41402abc4b2a76b9719d911017c592"
        assert env.read_file(str(tmp_path / "missing")) is None
        env.reset("blank")
        with pytest.raises(UnknownSnapshot):
            env.reset("nope")


def test_headless_service_placeholder(tmp_path):
    with TestClient(create_app(tmp_path, NoDisplay((320, 200)))) as client:
        env = HttpEnvironment(client=client)
        assert env.capture_screenshot().screenshot.size == (320, 200)
        with pytest.raises(EnvironmentUnreachable):
            env.perform_action(Click(1, 1))
