"""Chat-completion backends: remote HTTP, scripted (tests), and record/replay.

Requests use the chat-completions JSON shape: ``{"model", "messages": [{"role",
"name", "content": [text | image_url parts]}]}`` with images as base64 PNG data URLs.
The conversation owner's own messages become ``assistant`` turns; everything else
except the system prompt becomes ``user`` turns, tagged with the runtime role in
``name``.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import httpx

from .errors import BackendError, ReplayExhausted, ReplayMismatch
from .protocol import Conversation, ImagePart, Role, TextPart

log = logging.getLogger(__name__)

SLOTS = ("orchestrator", "programmer", "gui", "summarizer")
REPLIES_FILE = "replies.jsonl"


@dataclass(frozen=True)
class RoleConfig:
    model_name: str = "default"
    temperature: float | None = None


# --------------------------------------------------------------------------- rendering


def render_messages(conversation: Conversation) -> list[dict[str, Any]]:
    messages = []
    for message in conversation:
        if message.role == Role.SYSTEM:
            api_role = "system"
        elif message.role == conversation.owner:
            api_role = "assistant"
        else:
            api_role = "user"
        content: list[dict[str, Any]] = []
        for part in message.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            elif isinstance(part, ImagePart):
                b64 = base64.b64encode(conversation.attachments[part.digest]).decode("ascii")
                content.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}})
        messages.append({"role": api_role, "name": message.role.value, "content": content})
    return messages


def render_request(conversation: Conversation, role_config: RoleConfig | None = None) -> dict[str, Any]:
    cfg = role_config or RoleConfig()
    body: dict[str, Any] = {"model": cfg.model_name, "messages": render_messages(conversation)}
    if cfg.temperature is not None:
        body["temperature"] = cfg.temperature
    return body


# Sampling and identity settings do not change what was asked.
VOLATILE_FIELDS = ("model", "temperature", "user", "metadata", "stream", "seed")


def request_digest(body: Mapping[str, Any]) -> str:
    stable = {k: v for k, v in body.items() if k not in VOLATILE_FIELDS}
    canon = json.dumps(stable, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def conversation_digest(conversation: Conversation) -> str:
    return request_digest({"messages": render_messages(conversation)})


# --------------------------------------------------------------------------- backends


class ModelBackend(ABC):
    @abstractmethod
    def chat(self, conversation: Conversation, role_config: RoleConfig | None = None) -> str:
        """Return one reply to ``conversation``."""


@dataclass(frozen=True)
class ScriptedReply:
    """One canned reply. ``kind`` is ``always``, ``substring`` or ``round_index``."""

    reply: str
    kind: str = "always"
    value: Any = None

    @classmethod
    def always(cls, reply: str) -> "ScriptedReply":
        return cls(reply)

    @classmethod
    def substring(cls, text: str, reply: str) -> "ScriptedReply":
        return cls(reply, "substring", text)

    @classmethod
    def on_call(cls, n: int, reply: str) -> "ScriptedReply":
        return cls(reply, "round_index", n)

    def matches(self, call_index: int, prompt: str) -> bool:
        if self.kind == "always":
            return True
        if self.kind == "substring":
            return self.value in prompt
        if self.kind == "round_index":
            return self.value == call_index
        raise ValueError(f"unknown matcher {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        match: Any = "always" if self.kind == "always" else {self.kind: self.value}
        return {"match": match, "reply": self.reply}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScriptedReply":
        match = data.get("match", "always")
        if match == "always":
            return cls.always(data["reply"])
        if isinstance(match, Mapping) and len(match) == 1:
            (kind, value), = match.items()
            if kind in ("substring", "round_index"):
                return cls(data["reply"], kind, value)
        raise ValueError(f"bad scripted matcher {match!r}")


class ScriptedBackend(ModelBackend):
    """Deterministic canned replies; matchers are tried in order, first match wins.

    ``substring`` matchers look at the text of the latest message. Every call's
    conversation (role, text) is kept in ``requests`` for assertions.
    """

    def __init__(self, replies: Iterable[ScriptedReply], name: str = "scripted"):
        self.replies = list(replies)
        self.name = name
        self.calls = 0
        self.requests: list[list[tuple[str, str]]] = []
        self._lock = threading.Lock()

    @classmethod
    def sequence(cls, replies: Iterable[str], then: str | None = None, name: str = "scripted") -> "ScriptedBackend":
        script = [ScriptedReply.on_call(i, r) for i, r in enumerate(replies, start=1)]
        if then is not None:
            script.append(ScriptedReply.always(then))
        return cls(script, name)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls([ScriptedReply.from_dict(r) for r in data["replies"]], name=Path(path).stem)

    def to_dict(self) -> dict[str, Any]:
        return {"replies": [r.to_dict() for r in self.replies]}

    def chat(self, conversation: Conversation, role_config: RoleConfig | None = None) -> str:
        with self._lock:
            self.calls += 1
            index = self.calls
            self.requests.append([(m.role.value, m.text) for m in conversation])
        last = conversation.last()
        prompt = last.text if last is not None else ""
        for scripted in self.replies:
            if scripted.matches(index, prompt):
                return scripted.reply
        raise BackendError(f"{self.name}: no scripted reply for call {index}")


class HttpBackend(ModelBackend):
    """Chat-completions endpoint client with bounded retries for transient failures."""

    def __init__(
        self,
        endpoint: str,
        model_name: str = "default",
        api_key_env_var: str | None = None,
        temperature: float | None = None,
        client: httpx.Client | None = None,
        max_attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 300.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.role_config = RoleConfig(model_name, temperature)
        self.api_key_env_var = api_key_env_var
        self.max_attempts = min(max_attempts, 3)
        self.backoff = backoff
        self.timeout = timeout
        self._client = client or httpx.Client()
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env_var:
            key = os.environ.get(self.api_key_env_var)
            if not key:
                raise BackendError(f"environment variable {self.api_key_env_var} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, body: dict[str, Any]) -> str:
        try:
            resp = self._client.post(self.endpoint, json=body, headers=self._headers(), timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise BackendError(f"request failed: {exc}", transient=True) from exc
        if 400 <= resp.status_code < 500:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        if resp.status_code >= 500:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:500]}", transient=True)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response shape: {resp.text[:500]}") from exc
        if isinstance(content, list):
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        if not isinstance(content, str):
            raise BackendError("response content is not text")
        return content

    def chat(self, conversation: Conversation, role_config: RoleConfig | None = None) -> str:
        body = render_request(conversation, role_config or self.role_config)
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self._post(body)
            except BackendError as exc:
                if not exc.transient or attempt == self.max_attempts:
                    raise
                delay = self.backoff * 2 ** (attempt - 1)
                log.warning("transient backend error (attempt %d/%d), retrying in %.1fs: %s",
                            attempt, self.max_attempts, delay, exc)
                self._sleep(delay)
        raise AssertionError("unreachable")


# --------------------------------------------------------------------------- record / replay


class ReplyLog:
    """Line-delimited (slot, call, request_digest, reply) records, flushed per write."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._lock = threading.Lock()

    def write(self, record: dict[str, Any]) -> None:
        with self._lock:
            self._fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


class RecordingBackend(ModelBackend):
    def __init__(self, inner: ModelBackend, slot: str, log_: ReplyLog):
        self.inner = inner
        self.slot = slot
        self.log = log_
        self.calls = 0
        self._lock = threading.Lock()

    def chat(self, conversation: Conversation, role_config: RoleConfig | None = None) -> str:
        digest = conversation_digest(conversation)
        reply = self.inner.chat(conversation, role_config)
        with self._lock:
            self.calls += 1
            call = self.calls
        self.log.write({"slot": self.slot, "call": call, "request_digest": digest, "reply": reply})
        return reply


class ReplayBackend(ModelBackend):
    """Re-emits recorded replies in order. Strict mode also checks each request digest."""

    def __init__(self, records: list[dict[str, Any]], slot: str = "", strict: bool = False):
        self.records = records
        self.slot = slot
        self.strict = strict
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, slot: str, strict: bool = False) -> "ReplayBackend":
        return cls([r for r in load_replies(path) if r["slot"] == slot], slot, strict)

    def chat(self, conversation: Conversation, role_config: RoleConfig | None = None) -> str:
        with self._lock:
            index = self.calls
            self.calls += 1
            if index >= len(self.records):
                raise ReplayExhausted(f"{self.slot or 'replay'}: call {index + 1} but only {len(self.records)} recorded")
            record = self.records[index]
        if self.strict:
            digest = conversation_digest(conversation)
            if digest != record["request_digest"]:
                raise ReplayMismatch(
                    f"{self.slot}: request {index + 1} digest {digest[:16]} != recorded {record['request_digest'][:16]}"
                )
        return record["reply"]


def load_replies(path: str | Path) -> list[dict[str, Any]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


# --------------------------------------------------------------------------- backend sets


@dataclass
class BackendSet:
    orchestrator: ModelBackend
    programmer: ModelBackend
    gui: ModelBackend
    summarizer: ModelBackend

    def __post_init__(self) -> None:
        for slot in SLOTS:
            if not isinstance(getattr(self, slot), ModelBackend):
                raise TypeError(f"backend slot {slot!r} must be a ModelBackend")

    def items(self) -> list[tuple[str, ModelBackend]]:
        return [(slot, getattr(self, slot)) for slot in SLOTS]


def record_backends(backends: BackendSet, path: str | Path) -> tuple[BackendSet, ReplyLog]:
    sink = ReplyLog(path)
    wrapped = {slot: RecordingBackend(b, slot, sink) for slot, b in backends.items()}
    return BackendSet(**wrapped), sink


def replay_backends(path: str | Path, strict: bool = True) -> BackendSet:
    records = load_replies(path)
    return BackendSet(**{
        slot: ReplayBackend([r for r in records if r["slot"] == slot], slot, strict) for slot in SLOTS
    })


def record_and_replay(trace_path: str | Path, slot: str, strict: bool = False) -> ModelBackend:
    """Replay backend for one slot from a trace directory or replies file."""
    path = Path(trace_path)
    if path.is_dir():
        path = path / REPLIES_FILE
    return ReplayBackend.from_file(path, slot, strict)


_KINDS = ("http", "scripted", "replay")


def _build(cfg: Mapping[str, Any], base: Path) -> ModelBackend:
    if "api_key" in cfg:
        raise ValueError("inline API keys are not accepted; use api_key_env_var")
    kind = cfg.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"backend kind must be one of {_KINDS}, got {kind!r}")
    if kind == "http":
        if not cfg.get("endpoint"):
            raise ValueError("http backends need an endpoint")
        return HttpBackend(cfg["endpoint"], cfg.get("model_name", "default"),
                           cfg.get("api_key_env_var"), cfg.get("temperature"))
    if not cfg.get("script_path"):
        raise ValueError(f"{kind} backends need a script_path")
    path = base / cfg["script_path"]
    if kind == "scripted":
        return ScriptedBackend.from_file(path)
    raise ValueError("replay backends are configured per slot via replay_backends()")


def load_backend_config(path: str | Path) -> BackendSet:
    """Build a BackendSet from a JSON config.

    ``{"schema_version": 1, "roles": {slot: {kind, endpoint, model_name,
    api_key_env_var, temperature, script_path} | {"same_as": other_slot}}}``
    """
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("schema_version") != 1:
        raise ValueError(f"unsupported backend config schema_version {data.get('schema_version')!r}")
    roles = data.get("roles", {})
    if missing := [s for s in SLOTS if s not in roles]:
        raise ValueError(f"backend config is missing roles {missing}")
    built: dict[str, ModelBackend] = {}
    for slot in SLOTS:
        if "same_as" not in roles[slot]:
            built[slot] = _build(roles[slot], path.parent)
    for slot in SLOTS:
        if "same_as" in roles[slot]:
            target = roles[slot]["same_as"]
            if target not in built:
                raise ValueError(f"{slot}.same_as must name a slot with its own config, got {target!r}")
            built[slot] = built[target]
    return BackendSet(**built)
