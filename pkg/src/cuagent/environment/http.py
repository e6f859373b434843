"""Client for the interp-service wire protocol (see ``cuagent.service.app``).

One request per operation; retries belong to :class:`RetryingSession`.
"""

from __future__ import annotations

import base64
import json
import threading
from typing import Any

import httpx

from ..errors import (
    EnvironmentUnreachable,
    MalformedAction,
    SessionBusy,
    SessionExpired,
    TransportError,
    UnknownSnapshot,
)
from ..protocol import (
    CodeAction,
    ExecResult,
    GuiAction,
    Observation,
    Screenshot,
    Terminate,
    check_bounds,
    gui_action_to_dict,
)
from .base import DEFAULT_SCRIPT_TIMEOUT, EnvironmentSession

REQUEST_MARGIN_S = 30.0

_PROBE_SCRIPT = """\
import base64, hashlib, os, sys
path = {path!r}
if not os.path.isfile(path):
    sys.exit(3)
data = open(path, "rb").read()
sys.stdout.write(hashlib.md5(data).hexdigest() if {digest!r} else base64.b64encode(data).decode())
"""


class HttpEnvironment(EnvironmentSession):
    def __init__(self, base_url: str | None = None, session_id: str | None = None,
                 client: httpx.Client | None = None, screen: tuple[int, int] | None = None):
        if client is None and base_url is None:
            raise ValueError("need a base_url or an httpx client")
        self._client = client or httpx.Client(base_url=base_url)
        self.session_id = session_id or "default"
        self._inflight = threading.Lock()
        self._screen = screen

    @classmethod
    def connect(cls, base_url: str, new_session: bool = False) -> "HttpEnvironment":
        env = cls(base_url)
        if new_session:
            env.session_id = env._request("POST", "/sessions")["session_id"]
        return env

    @property
    def screen(self) -> tuple[int, int]:  # type: ignore[override]
        if self._screen is None:
            self.capture_screenshot()
        return self._screen  # type: ignore[return-value]

    def _request(self, method: str, path: str, body: Any = None, timeout: float = REQUEST_MARGIN_S) -> dict[str, Any]:
        if not self._inflight.acquire(blocking=False):
            raise SessionBusy(f"session {self.session_id} already has an operation in flight")
        try:
            resp = self._client.request(method, path, json=body, timeout=timeout,
                                        headers={"X-Session-Id": self.session_id})
        except httpx.HTTPError as exc:
            raise TransportError(f"{method} {path}: {exc}") from exc
        finally:
            self._inflight.release()
        try:
            data = resp.json()
        except json.JSONDecodeError:
            raise TransportError(f"{method} {path}: non-JSON response ({resp.status_code})") from None
        if resp.status_code == 200:
            return data
        error = data.get("error", resp.text) if isinstance(data, dict) else resp.text
        if resp.status_code == 409:
            raise SessionBusy(error)
        if resp.status_code == 410:
            raise SessionExpired(error)
        if resp.status_code == 404 and path == "/reset":
            raise UnknownSnapshot(error)
        if resp.status_code == 400 and path == "/action":
            raise MalformedAction(error)
        if resp.status_code == 501:
            raise EnvironmentUnreachable(error)
        raise TransportError(f"{method} {path}: HTTP {resp.status_code}: {error}")

    def _screenshot(self, data: dict[str, Any]) -> Screenshot:
        shot = Screenshot.from_png(base64.b64decode(data["screenshot"]))
        if self._screen is None:
            self._screen = shot.size
        return shot

    def execute_script(self, action: CodeAction, timeout: float = DEFAULT_SCRIPT_TIMEOUT):
        data = self._request("POST", "/execute",
                             {"language": action.language, "code": action.source, "timeout_s": timeout},
                             timeout=timeout + REQUEST_MARGIN_S)
        result = ExecResult(
            exit_code=data["exit_code"],
            stdout=data["stdout"],
            stderr=data["stderr"],
            timed_out=data["timed_out"],
            duration=data["duration"],
            stdout_truncated=data["stdout_truncated"],
            stderr_truncated=data["stderr_truncated"],
        )
        return result, Observation(self._screenshot(data), f"exit_code={result.exit_code}")

    def perform_action(self, action: GuiAction) -> Observation:
        if isinstance(action, Terminate):
            raise MalformedAction("terminate is not dispatched to the environment")
        if self._screen is not None:
            check_bounds(action, self._screen)
        return Observation(self._screenshot(self._request("POST", "/action", gui_action_to_dict(action))), "")

    def capture_screenshot(self) -> Observation:
        return Observation(self._screenshot(self._request("GET", "/screenshot")), "")

    def reset(self, snapshot_id: str) -> "HttpEnvironment":
        self._request("POST", "/reset", {"snapshot_id": snapshot_id})
        return self

    def _probe(self, path: str, digest: bool) -> str | None:
        result, _ = self.execute_script(CodeAction("python", _PROBE_SCRIPT.format(path=path, digest=digest)), 60)
        if result.exit_code == 3:
            return None
        if result.exit_code != 0 or result.stdout_truncated:
            raise TransportError(f"file probe for {path} failed: exit {result.exit_code} {result.stderr[-200:]}")
        return result.stdout

    def read_file(self, path: str) -> bytes | None:
        out = self._probe(path, digest=False)
        return None if out is None else base64.b64decode(out)

    def file_md5(self, path: str) -> str | None:
        return self._probe(path, digest=True)

    def close(self) -> None:
        self._client.close()
