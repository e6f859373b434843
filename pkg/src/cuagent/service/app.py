"""HTTP daemon exposing script execution, GUI input, screenshots and reset.

Wire protocol (all bodies JSON, screenshots base64 PNG). Every endpoint accepts an
optional ``X-Session-Id`` header; requests without one use the ``default`` session.

    POST /sessions                               -> 200 {session_id, workdir}
    POST /execute  {language, code, timeout_s}   -> 200 ExecuteResponse | 400 | 409 | 500
    POST /action   {<GUI action object>}         -> 200 ScreenshotResponse | 400 | 409 | 501
    GET  /screenshot                             -> 200 ScreenshotResponse | 409
    POST /reset    {snapshot_id}                 -> 200 ResetResponse | 404 | 409
    GET  /health                                 -> 200 {status, display}

Errors are ``{"error": text}``. An unknown session id answers 410.
"""

from __future__ import annotations

import base64
import logging
import os
import shutil
import signal
import subprocess
import sys
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from fastapi import Body, FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field
from starlette.exceptions import HTTPException

from ..errors import ActionError
from ..protocol import MAX_OUTPUT_BYTES, TIMEOUT_EXIT_CODE, Terminate, gui_action_from_dict, truncate_output
from .displays import Display, NoDisplay, placeholder_png

log = logging.getLogger(__name__)

DEFAULT_SESSION = "default"
MAX_TIMEOUT_S = 3600.0
KILL_GRACE_S = 5.0
ENV_ALLOWLIST = (
    "PATH", "HOME", "USER", "LOGNAME", "SHELL", "LANG", "LC_ALL", "LC_CTYPE", "TERM", "TZ",
    "DISPLAY", "XAUTHORITY", "WAYLAND_DISPLAY", "XDG_RUNTIME_DIR", "DBUS_SESSION_BUS_ADDRESS",
)


# --------------------------------------------------------------------------- wire models


class ExecuteRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    language: Literal["python", "bash"]
    code: str = Field(min_length=1)
    timeout_s: float = Field(default=120.0, gt=0, le=MAX_TIMEOUT_S)


class ResetRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    snapshot_id: str = Field(min_length=1)


class ScreenshotResponse(BaseModel):
    model_config = ConfigDict(extra="forbid")
    screenshot: str
    screenshot_placeholder: bool


class ExecuteResponse(ScreenshotResponse):
    exit_code: int
    stdout: str
    stderr: str
    timed_out: bool
    stdout_truncated: bool
    stderr_truncated: bool
    duration: float


class ResetResponse(BaseModel):
    model_config = ConfigDict(extra="forbid")
    snapshot_id: str
    session_id: str


class SessionResponse(BaseModel):
    model_config = ConfigDict(extra="forbid")
    session_id: str
    workdir: str


class HealthResponse(BaseModel):
    model_config = ConfigDict(extra="forbid")
    status: Literal["ok"]
    display: bool


class ErrorResponse(BaseModel):
    model_config = ConfigDict(extra="forbid")
    error: str


def wire_schemas() -> dict[str, dict[str, Any]]:
    """JSON Schemas of every request/response body, keyed by model name."""
    models = (ExecuteRequest, ResetRequest, ScreenshotResponse, ExecuteResponse,
              ResetResponse, SessionResponse, HealthResponse, ErrorResponse)
    return {m.__name__: m.model_json_schema() for m in models}


# --------------------------------------------------------------------------- sessions


@dataclass
class SessionRecord:
    session_id: str
    workdir: Path
    created_at: float = field(default_factory=time.time)
    busy: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def acquire(self) -> bool:
        with self.lock:
            if self.busy:
                return False
            self.busy = True
            return True

    def release(self) -> None:
        with self.lock:
            self.busy = False


class _Busy(Exception):
    pass


def scrubbed_env() -> dict[str, str]:
    env = {k: os.environ[k] for k in ENV_ALLOWLIST if k in os.environ}
    env.setdefault("PATH", "/usr/local/bin:/usr/bin:/bin")
    env["PYTHONIOENCODING"] = "utf-8"
    return env


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def run_script(language: str, code: str, timeout_s: float, workdir: Path, max_output_bytes: int) -> dict[str, Any]:
    """Run one script as a fresh process group; kill the whole group on timeout."""
    suffix = ".py" if language == "python" else ".sh"
    script = workdir / f".cuagent-{uuid.uuid4().hex}{suffix}"
    script.write_text(code, encoding="utf-8")
    argv = [sys.executable, str(script)] if language == "python" else ["bash", str(script)]
    started = time.monotonic()
    timed_out = False
    try:
        proc = subprocess.Popen(argv, cwd=workdir, env=scrubbed_env(), stdin=subprocess.DEVNULL,
                                stdout=subprocess.PIPE, stderr=subprocess.PIPE, start_new_session=True)
        try:
            out, err = proc.communicate(timeout=timeout_s)
        except subprocess.TimeoutExpired:
            timed_out = True
            _kill_group(proc)
            try:
                out, err = proc.communicate(timeout=KILL_GRACE_S)
            except subprocess.TimeoutExpired:
                # a descendant escaped the group and still holds the pipes
                proc.kill()
                out, err = b"", b""
    finally:
        script.unlink(missing_ok=True)
    stdout, out_cut = truncate_output(out.decode("utf-8", "replace"), max_output_bytes)
    stderr, err_cut = truncate_output(err.decode("utf-8", "replace"), max_output_bytes)
    if timed_out:
        stderr += f"\n[timed out after {timeout_s:g}s]"
    return {
        "exit_code": TIMEOUT_EXIT_CODE if timed_out else proc.returncode,
        "stdout": stdout,
        "stderr": stderr,
        "timed_out": timed_out,
        "stdout_truncated": out_cut,
        "stderr_truncated": err_cut,
        "duration": round(time.monotonic() - started, 6),
    }


# --------------------------------------------------------------------------- app


def create_app(
    workdir: str | Path,
    display: Display | None = None,
    max_output_bytes: int = MAX_OUTPUT_BYTES,
    fixtures_dir: str | Path | None = None,
) -> FastAPI:
    root = Path(workdir).resolve()
    root.mkdir(parents=True, exist_ok=True)
    display = display or NoDisplay()
    fixtures = Path(fixtures_dir).resolve() if fixtures_dir else None
    sessions: dict[str, SessionRecord] = {}
    registry_lock = threading.Lock()

    def new_session(session_id: str) -> SessionRecord:
        path = root / session_id
        path.mkdir(parents=True, exist_ok=True)
        rec = SessionRecord(session_id, path)
        sessions[session_id] = rec
        return rec

    new_session(DEFAULT_SESSION)

    app = FastAPI(title="cuagent interp service")
    app.state.sessions = sessions
    app.state.display = display

    @app.exception_handler(HTTPException)
    async def _http_error(request: Request, exc: HTTPException):
        return JSONResponse({"error": str(exc.detail)}, status_code=exc.status_code)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        msgs = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        return JSONResponse({"error": f"bad request: {msgs}"}, status_code=400)

    @app.exception_handler(_Busy)
    async def _busy(request: Request, exc: _Busy):
        return JSONResponse({"error": f"session {exc} is busy"}, status_code=409)

    def session_for(session_id: str | None) -> SessionRecord:
        sid = session_id or DEFAULT_SESSION
        with registry_lock:
            rec = sessions.get(sid)
        if rec is None:
            raise HTTPException(410, f"unknown or expired session {sid!r}")
        if not rec.acquire():
            raise _Busy(sid)
        return rec

    def screenshot_fields() -> dict[str, Any]:
        png = display.capture() if display.available else None
        placeholder = png is None
        if placeholder:
            png = placeholder_png(display.screen)
        return {"screenshot": base64.b64encode(png).decode("ascii"), "screenshot_placeholder": placeholder}

    @app.get("/health", response_model=HealthResponse)
    def health():
        return {"status": "ok", "display": bool(display.available)}

    @app.post("/sessions", response_model=SessionResponse)
    def create_session():
        with registry_lock:
            rec = new_session(uuid.uuid4().hex[:16])
        return {"session_id": rec.session_id, "workdir": str(rec.workdir)}

    @app.post("/execute", response_model=ExecuteResponse)
    def execute(req: ExecuteRequest, x_session_id: str | None = Header(default=None)):
        rec = session_for(x_session_id)
        try:
            try:
                result = run_script(req.language, req.code, req.timeout_s, rec.workdir, max_output_bytes)
            except OSError as exc:
                log.exception("script launch failed")
                raise HTTPException(500, f"internal error: {exc}") from exc
            return {**result, **screenshot_fields()}
        finally:
            rec.release()

    @app.post("/action", response_model=ScreenshotResponse)
    def action(body: dict = Body(...), x_session_id: str | None = Header(default=None)):
        rec = session_for(x_session_id)
        try:
            try:
                act = gui_action_from_dict(body, display.screen)
            except ActionError as exc:
                raise HTTPException(400, str(exc)) from exc
            if isinstance(act, Terminate):
                raise HTTPException(400, "terminate is not an input event")
            if not display.available:
                raise HTTPException(501, "no display available for GUI actions")
            display.inject(act)
            return screenshot_fields()
        finally:
            rec.release()

    @app.get("/screenshot", response_model=ScreenshotResponse)
    def screenshot(x_session_id: str | None = Header(default=None)):
        rec = session_for(x_session_id)
        try:
            return screenshot_fields()
        finally:
            rec.release()

    @app.post("/reset", response_model=ResetResponse)
    def reset(req: ResetRequest, x_session_id: str | None = Header(default=None)):
        rec = session_for(x_session_id)
        try:
            source = None
            if req.snapshot_id != "blank":
                source = fixtures / req.snapshot_id if fixtures else None
                if source is None or not source.is_dir() or source.parent != fixtures:
                    source = None
                    if not display.knows_snapshot(req.snapshot_id):
                        raise HTTPException(404, f"unknown snapshot {req.snapshot_id!r}")
            for child in rec.workdir.iterdir():
                if child.is_dir() and not child.is_symlink():
                    shutil.rmtree(child)
                else:
                    child.unlink()
            if source is not None:
                shutil.copytree(source, rec.workdir, dirs_exist_ok=True)
            display.reset(req.snapshot_id)
            return {"snapshot_id": req.snapshot_id, "session_id": rec.session_id}
        finally:
            rec.release()

    return app


def serve(host: str = "127.0.0.1", port: int = 8765, **kwargs: Any) -> None:
    import uvicorn

    uvicorn.run(create_app(**kwargs), host=host, port=port, log_level="info")
