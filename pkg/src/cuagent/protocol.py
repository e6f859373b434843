"""Shared value types, the GUI action grammar, and parsers for model replies.

Everything here is immutable after construction (except ``Conversation``, which is
append-only) and safe to share between concurrently running tasks.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import string
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Iterator, Mapping, Union

from .errors import MalformedAction, OutOfBounds, UnknownKey
from .png import png_dimensions

log = logging.getLogger(__name__)

MAX_OUTPUT_BYTES = 32 * 1024
TIMEOUT_EXIT_CODE = 124
DEFAULT_SCREEN = (1920, 1080)


class Role(str, Enum):
    SYSTEM = "system"
    ORCHESTRATOR = "orchestrator"
    CODING_AGENT = "coding_agent"
    CODE_INTERPRETER = "code_interpreter"
    GUI_AGENT = "gui_agent"
    GUI_INTERPRETER = "gui_interpreter"
    SUMMARIZER = "summarizer"


class Worker(str, Enum):
    PROGRAMMER = "programmer"
    GUI_OPERATOR = "gui_operator"


class WorkerOutcome(str, Enum):
    COMPLETED = "completed"
    BUDGET_EXHAUSTED = "budget_exhausted"
    ERROR = "error"


# --------------------------------------------------------------------------- budgets


@dataclass(frozen=True)
class Budgets:
    """Round/step limits: programmer rounds (I), GUI steps (K), orchestrator rounds (J)."""

    programmer_max_rounds: int = 20
    gui_max_steps: int = 25
    orchestrator_max_rounds: int = 15

    def __post_init__(self) -> None:
        for name in ("programmer_max_rounds", "gui_max_steps", "orchestrator_max_rounds"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    def to_dict(self) -> dict[str, int]:
        return {
            "programmer_max_rounds": self.programmer_max_rounds,
            "gui_max_steps": self.gui_max_steps,
            "orchestrator_max_rounds": self.orchestrator_max_rounds,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "Budgets":
        data = dict(data or {})
        unknown = set(data) - {"programmer_max_rounds", "gui_max_steps", "orchestrator_max_rounds"}
        if unknown:
            raise ValueError(f"unknown budget fields: {sorted(unknown)}")
        return cls(**data)


def interaction_bound(b: Budgets) -> int:
    """Worst-case number of environment interactions for one task."""
    return b.orchestrator_max_rounds * max(b.programmer_max_rounds, b.gui_max_steps)


# --------------------------------------------------------------------------- observations


@dataclass(frozen=True)
class Screenshot:
    png: bytes
    width: int
    height: int

    def __post_init__(self) -> None:
        try:
            dims = png_dimensions(self.png)
        except ValueError as exc:
            raise ValueError(f"screenshot is not a PNG: {exc}") from None
        if dims != (self.width, self.height):
            raise ValueError(f"screenshot decodes to {dims}, declared {(self.width, self.height)}")

    @classmethod
    def from_png(cls, data: bytes) -> "Screenshot":
        width, height = png_dimensions(data)
        return cls(data, width, height)

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.png).hexdigest()

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height


@dataclass(frozen=True)
class Observation:
    screenshot: Screenshot
    text: str | None = None
    captured_at: float = field(default_factory=time.monotonic, compare=False)


@dataclass(frozen=True)
class ExecResult:
    exit_code: int
    stdout: str = ""
    stderr: str = ""
    timed_out: bool = False
    duration: float = field(default=0.0, compare=False)
    stdout_truncated: bool = False
    stderr_truncated: bool = False

    def __post_init__(self) -> None:
        if self.timed_out and self.exit_code != TIMEOUT_EXIT_CODE:
            raise ValueError(f"timed out results must carry exit code {TIMEOUT_EXIT_CODE}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "exit_code": self.exit_code,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "timed_out": self.timed_out,
            "duration": self.duration,
            "stdout_truncated": self.stdout_truncated,
            "stderr_truncated": self.stderr_truncated,
        }


def truncate_output(text: str, cap: int = MAX_OUTPUT_BYTES) -> tuple[str, bool]:
    """Cap ``text`` at ``cap`` UTF-8 bytes, appending a marker when anything was cut."""
    raw = text.encode("utf-8", "replace")
    if len(raw) <= cap:
        return text, False
    kept = raw[:cap].decode("utf-8", "ignore")
    return f"{kept}\n[... truncated {len(raw) - cap} bytes]", True


# --------------------------------------------------------------------------- conversations


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    digest: str


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class Message:
    role: Role
    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        if not self.parts:
            raise ValueError("a message needs at least one part")

    @property
    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))

    @property
    def images(self) -> list[str]:
        return [p.digest for p in self.parts if isinstance(p, ImagePart)]


class Conversation:
    """Append-only message log with a content-addressed image store.

    One conversation is the whole memory of one agent instance.
    """

    def __init__(self, owner: Role):
        self.owner = Role(owner)
        self.messages: list[Message] = []
        self.attachments: dict[str, bytes] = {}

    def __len__(self) -> int:
        return len(self.messages)

    def __iter__(self) -> Iterator[Message]:
        return iter(self.messages)

    def add(self, message: Message) -> Message:
        for digest in message.images:
            if digest not in self.attachments:
                raise ValueError(f"image {digest[:12]} is not in this conversation's store")
        self.messages.append(message)
        return message

    def append(self, role: Role, text: str | None = None, images: tuple[Screenshot, ...] | list = ()) -> Message:
        parts: list[Part] = []
        if text is not None:
            parts.append(TextPart(text))
        for shot in images:
            self.attachments.setdefault(shot.digest, shot.png)
            parts.append(ImagePart(shot.digest))
        return self.add(Message(Role(role), tuple(parts)))

    def clear(self) -> None:
        self.messages.clear()
        self.attachments.clear()

    def last(self, role: Role | None = None) -> Message | None:
        for message in reversed(self.messages):
            if role is None or message.role == role:
                return message
        return None


# --------------------------------------------------------------------------- task-level records


@dataclass(frozen=True)
class TaskSpec:
    id: str
    instruction: str
    env_context: Mapping[str, str] = field(default_factory=dict)
    budgets: Budgets = field(default_factory=Budgets)
    evaluator: Any = None  # EvaluatorExpr | None
    domain: str = "os"
    snapshot: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("task id must be non-empty")
        if not self.instruction or not self.instruction.strip():
            raise ValueError("task instruction must be non-empty")


@dataclass(frozen=True)
class SubtaskAssignment:
    worker: Worker
    instruction: str
    env_context: Mapping[str, str] = field(default_factory=dict)
    required_info: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "worker", Worker(self.worker))
        if not self.instruction or not self.instruction.strip():
            raise ValueError("subtask instruction must be non-empty")


@dataclass(frozen=True)
class WorkerReport:
    worker: Worker
    summary_or_message: str
    final_screenshot: Screenshot
    env_interactions_used: int
    outcome: WorkerOutcome
    summary_fallback: bool = False
    error: str | None = None
    # True when the environment died; the orchestrator aborts the task on these.
    fatal: bool = False


# --------------------------------------------------------------------------- GUI actions

KEY_VOCABULARY: frozenset[str] = frozenset(
    list(string.ascii_lowercase)
    + list(string.digits)
    + [f"f{i}" for i in range(1, 13)]
    + ["ctrl", "alt", "shift", "super", "enter", "esc", "tab"]
    + ["up", "down", "left", "right", "space", "backspace", "delete"]
)

BUTTONS = ("left", "right", "middle")


@dataclass(frozen=True)
class MoveMouse:
    x: int
    y: int


@dataclass(frozen=True)
class Click:
    x: int
    y: int
    button: str = "left"
    count: int = 1


@dataclass(frozen=True)
class Hotkey:
    keys: tuple[str, ...]


@dataclass(frozen=True)
class TypeText:
    text: str


@dataclass(frozen=True)
class Terminate:
    message: str


GuiAction = Union[MoveMouse, Click, Hotkey, TypeText, Terminate]


def gui_action_to_dict(action: GuiAction) -> dict[str, Any]:
    if isinstance(action, MoveMouse):
        return {"type": "move", "x": action.x, "y": action.y}
    if isinstance(action, Click):
        return {"type": "click", "x": action.x, "y": action.y, "button": action.button, "count": action.count}
    if isinstance(action, Hotkey):
        return {"type": "hotkey", "keys": list(action.keys)}
    if isinstance(action, TypeText):
        return {"type": "type", "text": action.text}
    if isinstance(action, Terminate):
        return {"type": "terminate", "message": action.message}
    raise TypeError(f"not a GUI action: {action!r}")


def serialize_gui_action(action: GuiAction) -> str:
    """Canonical single-line encoding of an action."""
    return json.dumps(gui_action_to_dict(action), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


_FIELDS = {
    "move": ({"x", "y"}, set()),
    "click": ({"x", "y"}, {"button", "count"}),
    "hotkey": ({"keys"}, set()),
    "type": ({"text"}, set()),
    "terminate": ({"message"}, set()),
}


def _coord(data: Mapping[str, Any], name: str) -> int:
    value = data[name]
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedAction(f"{name} must be an integer pixel coordinate, got {value!r}")
    return value


def check_bounds(action: GuiAction, screen: tuple[int, int]) -> None:
    if isinstance(action, (MoveMouse, Click)):
        width, height = screen
        if not (0 <= action.x < width and 0 <= action.y < height):
            raise OutOfBounds(f"({action.x}, {action.y}) is outside the {width}x{height} screen")


def gui_action_from_dict(data: Any, screen: tuple[int, int] | None = None) -> GuiAction:
    """Validate a decoded action object. ``screen`` enables the bounds check."""
    if not isinstance(data, Mapping):
        raise MalformedAction("an action must be an object")
    kind = data.get("type")
    if kind not in _FIELDS:
        raise MalformedAction(f"unknown action type {kind!r}")
    required, optional = _FIELDS[kind]
    present = set(data) - {"type"}
    if missing := required - present:
        raise MalformedAction(f"{kind} action is missing {sorted(missing)}")
    if extra := present - required - optional:
        raise MalformedAction(f"{kind} action has unexpected fields {sorted(extra)}")

    action: GuiAction
    if kind == "move":
        action = MoveMouse(_coord(data, "x"), _coord(data, "y"))
    elif kind == "click":
        button = data.get("button", "left")
        count = data.get("count", 1)
        if button not in BUTTONS:
            raise MalformedAction(f"button must be one of {BUTTONS}, got {button!r}")
        if isinstance(count, bool) or count not in (1, 2):
            raise MalformedAction(f"count must be 1 or 2, got {count!r}")
        action = Click(_coord(data, "x"), _coord(data, "y"), button, count)
    elif kind == "hotkey":
        keys = data["keys"]
        if not isinstance(keys, list) or not keys or not all(isinstance(k, str) for k in keys):
            raise MalformedAction("keys must be a non-empty list of key names")
        normalized = tuple(k.lower() for k in keys)
        unknown = [k for k in normalized if k not in KEY_VOCABULARY]
        if unknown:
            raise UnknownKey(f"unknown key name(s): {unknown}")
        action = Hotkey(normalized)
    elif kind == "type":
        text = data["text"]
        if not isinstance(text, str) or not text:
            raise MalformedAction("type action needs non-empty text")
        action = TypeText(text)
    else:
        message = data["message"]
        if not isinstance(message, str) or not message.strip():
            raise MalformedAction("terminate needs a non-empty message")
        action = Terminate(message)

    if screen is not None:
        check_bounds(action, screen)
    return action


def iter_json_objects(text: str) -> Iterator[dict[str, Any]]:
    """Yield every top-level JSON object embedded in free text, in order."""
    decoder = json.JSONDecoder()
    pos = 0
    while (start := text.find("{", pos)) != -1:
        try:
            obj, end = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            pos = start + 1
            continue
        if isinstance(obj, dict):
            yield obj
        pos = end


def parse_gui_action(model_text: str, screen: tuple[int, int]) -> GuiAction:
    """Extract exactly one GUI action from a model reply.

    Replies with several action objects keep the first and log a warning.
    """
    objects = list(iter_json_objects(model_text))
    if not objects:
        raise MalformedAction("no action object found in reply")
    if len(objects) > 1:
        log.warning("reply encodes %d action objects; dispatching only the first", len(objects))
    return gui_action_from_dict(objects[0], screen)


def describe_gui_action(action: GuiAction) -> str:
    if isinstance(action, MoveMouse):
        return f"move({action.x}, {action.y})"
    if isinstance(action, Click):
        suffix = "" if (action.button, action.count) == ("left", 1) else f", {action.button} x{action.count}"
        return f"click({action.x}, {action.y}{suffix})"
    if isinstance(action, Hotkey):
        return "hotkey(" + "+".join(action.keys) + ")"
    if isinstance(action, TypeText):
        shown = action.text if len(action.text) <= 40 else action.text[:37] + "..."
        return f"type({shown!r})"
    return f"terminate({action.message!r})"


# --------------------------------------------------------------------------- code actions

LANGUAGES = ("python", "bash")


@dataclass(frozen=True)
class CodeAction:
    language: str
    source: str

    def __post_init__(self) -> None:
        if self.language not in LANGUAGES:
            raise ValueError(f"language must be python or bash, got {self.language!r}")
        if not self.source or not self.source.strip():
            raise ValueError("script source must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"language": self.language, "source": self.source}


# Opening fence with an info string, body, closing fence on its own line.
_FENCE = re.compile(r"^[ \t]*```[ \t]*([^\n`]*)\n(.*?)^[ \t]*```[ \t]*$", re.MULTILINE | re.DOTALL)


def extract_code_blocks(model_text: str) -> list[CodeAction]:
    """Return every ```python / ```bash fenced block in document order."""
    blocks = []
    for match in _FENCE.finditer(model_text):
        info = match.group(1).strip().split()
        language = info[0].lower() if info else ""
        source = match.group(2).rstrip("\n")
        if language in LANGUAGES and source.strip():
            blocks.append(CodeAction(language, source))
    return blocks
