"""Deterministic in-process desktop for hermetic runs.

The state is a small virtual filesystem plus a stack of windows. GUI actions follow a
fixed transition table and scripts are interpreted as a tiny effect-command language,
so nothing ever touches the host. ``(seed, snapshot, action sequence)`` fully
determines every state and every screenshot byte.

Script commands (bash spelling / python spelling):

    echo ARGS... [> PATH | >> PATH]     echo(*args) / print(*args)
    write_file PATH CONTENT             write_file(path, content)
    read_file PATH                      read_file(path)
    list_dir [PATH]                     list_dir(path="/")
    mkdir [-p] PATH                     mkdir(path)
    rm [-r] [-f] PATH                   rm(path)
    sleep SECONDS                       sleep(seconds)    (virtual time)
    exit CODE                           exit(code) / sys.exit(code)

Anything else fails with exit code 127 and a ``sim:`` prefixed message. The read-only
files ``/sim/windows``, ``/sim/focused`` and ``/sim/clipboard`` expose desktop state
to scripts and evaluators.
"""

from __future__ import annotations

import ast
import copy
import json
import posixpath
import shlex
from dataclasses import dataclass, field
from typing import Any

from ..errors import MalformedAction, UnknownSnapshot
from ..protocol import (
    DEFAULT_SCREEN,
    TIMEOUT_EXIT_CODE,
    Click,
    CodeAction,
    ExecResult,
    GuiAction,
    Hotkey,
    MoveMouse,
    Observation,
    Terminate,
    TypeText,
    check_bounds,
    truncate_output,
)
from .base import DEFAULT_SCRIPT_TIMEOUT, EnvironmentSession

TITLE_BAR = 28
UNSUPPORTED_EXIT = 127
VIRTUAL_ROOT = "/sim"
TEXT_KINDS = ("editor", "dialog")
WINDOW_KINDS = {"Editor": "editor", "Files": "files", "Save As": "dialog"}


@dataclass
class Widget:
    id: str
    label: str
    rect: tuple[int, int, int, int]  # x, y, w, h
    effect: str

    def contains(self, x: int, y: int) -> bool:
        rx, ry, rw, rh = self.rect
        return rx <= x < rx + rw and ry <= y < ry + rh


@dataclass
class Window:
    title: str
    kind: str
    rect: tuple[int, int, int, int]
    buffer: str = ""
    widgets: list[Widget] = field(default_factory=list)
    focused: bool = False
    file_path: str | None = None
    saved: bool = True
    parent: str | None = None  # dialogs: title of the window they act on

    def contains(self, x: int, y: int) -> bool:
        rx, ry, rw, rh = self.rect
        return rx <= x < rx + rw and ry <= y < ry + rh


@dataclass
class FileEntry:
    data: bytes
    mode: int = 0o644


@dataclass
class SimDesktopState:
    screen: tuple[int, int] = DEFAULT_SCREEN
    files: dict[str, FileEntry] = field(default_factory=dict)
    dirs: set[str] = field(default_factory=lambda: {"/"})
    windows: list[Window] = field(default_factory=list)  # z-order, last is on top
    cursor: tuple[int, int] = (0, 0)
    clipboard: bytes = b""
    rng_seed: int = 0

    # -- windows

    @property
    def focused(self) -> Window | None:
        for w in self.windows:
            if w.focused:
                return w
        return None

    def window(self, title: str) -> Window | None:
        for w in reversed(self.windows):
            if w.title == title:
                return w
        return None

    def focus(self, win: Window) -> None:
        for w in self.windows:
            w.focused = False
        self.windows.remove(win)
        self.windows.append(win)
        win.focused = True

    def open_window(self, title: str, kind: str | None = None, **kwargs: Any) -> Window:
        kind = kind or WINDOW_KINDS.get(title, "app")
        width, height = self.screen
        n = len(self.windows)
        w, h = min(960, width - 40), min(600, height - 40)
        x = min(240 + 40 * n, width - w)
        y = min(60 + 30 * n, height - h)
        if kind == "dialog":
            w, h = min(520, width), min(160, height)
            x, y = (width - w) // 2, (height - h) // 2
        win = Window(title=title, kind=kind, rect=(x, y, w, h), **kwargs)
        self.windows.append(win)
        self.focus(win)
        return win

    def close_window(self, win: Window) -> None:
        self.windows.remove(win)
        win.focused = False
        if self.windows and self.focused is None:
            self.focus(self.windows[-1])

    # -- filesystem

    def ensure_dir(self, path: str) -> None:
        parts = [p for p in path.split("/") if p]
        cur = ""
        for p in parts:
            cur = f"{cur}/{p}"
            if cur in self.files:
                raise NotADirectoryError(cur)
            self.dirs.add(cur)

    def write(self, path: str, data: bytes, append: bool = False) -> None:
        if path == VIRTUAL_ROOT or path.startswith(VIRTUAL_ROOT + "/"):
            raise PermissionError(f"{path}: read-only file system")
        if path in self.dirs:
            raise IsADirectoryError(path)
        self.ensure_dir(posixpath.dirname(path))
        if append and path in self.files:
            data = self.files[path].data + data
        mode = self.files[path].mode if path in self.files else 0o644
        self.files[path] = FileEntry(data, mode)

    def read(self, path: str) -> bytes:
        virtual = self.virtual_file(path)
        if virtual is not None:
            return virtual
        if path in self.dirs:
            raise IsADirectoryError(path)
        if path not in self.files:
            raise FileNotFoundError(path)
        return self.files[path].data

    def virtual_file(self, path: str) -> bytes | None:
        if path == f"{VIRTUAL_ROOT}/windows":
            return "".join(f"{w.title}\n" for w in self.windows).encode()
        if path == f"{VIRTUAL_ROOT}/focused":
            f = self.focused
            return (f"{f.title}\n" if f else "").encode()
        if path == f"{VIRTUAL_ROOT}/clipboard":
            return self.clipboard
        return None

    def listdir(self, path: str) -> list[str]:
        if path in self.files:
            raise NotADirectoryError(path)
        if path not in self.dirs:
            raise FileNotFoundError(path)
        prefix = path.rstrip("/") + "/"
        names = set()
        for p in list(self.files) + list(self.dirs):
            if p != path and p.startswith(prefix):
                rest = p[len(prefix):]
                head = rest.split("/", 1)[0]
                names.add(head + "/" if ("/" in rest or p in self.dirs) else head)
        return sorted(names)

    def remove(self, path: str, recursive: bool = False) -> None:
        if path in self.files:
            del self.files[path]
            return
        if path not in self.dirs or path == "/":
            raise FileNotFoundError(path)
        children = self.listdir(path)
        if children and not recursive:
            raise OSError(f"{path}: directory not empty")
        prefix = path.rstrip("/") + "/"
        for p in [p for p in self.files if p.startswith(prefix)]:
            del self.files[p]
        self.dirs = {d for d in self.dirs if d != path and not d.startswith(prefix)}

    # -- digest

    def digest(self) -> dict[str, Any]:
        """Machine-checkable summary of everything visible on screen (plus the cursor)."""
        return {
            "cursor": list(self.cursor),
            "focused": self.focused.title if self.focused else None,
            "windows": [
                {
                    "title": w.title,
                    "kind": w.kind,
                    "rect": list(w.rect),
                    "buffer": w.buffer,
                    "saved": w.saved,
                    "file_path": w.file_path,
                    "widgets": [{"id": g.id, "label": g.label, "rect": list(g.rect)} for g in w.widgets],
                }
                for w in self.windows
            ],
        }

    def digest_text(self) -> str:
        return json.dumps(self.digest(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# --------------------------------------------------------------------------- fixtures


def _launcher(state: SimDesktopState) -> Window:
    width, height = state.screen
    widgets = [
        Widget("editor", "Text Editor", (40, 100, 160, 60), "open_window:Editor"),
        Widget("files", "Files", (40, 200, 160, 60), "open_window:Files"),
    ]
    for g in widgets:
        x, y, w, h = g.rect
        if x + w > width or y + h > height:
            raise ValueError(f"screen {width}x{height} is too small for the launcher")
    win = Window("Launcher", "app", (0, 0, width, height), widgets=widgets)
    state.windows.append(win)
    state.focus(win)
    return win


def _home(state: SimDesktopState) -> None:
    for d in ("/home/user", "/tmp"):
        state.ensure_dir(d)


def make_fixture(snapshot_id: str, seed: int = 0, screen: tuple[int, int] = DEFAULT_SCREEN) -> SimDesktopState:
    state = SimDesktopState(screen=screen, rng_seed=seed)
    if snapshot_id == "blank":
        return state
    if snapshot_id == "editor_open":
        _home(state)
        state.open_window("Editor", "editor")
    elif snapshot_id == "desktop":
        _home(state)
        _launcher(state)
    elif snapshot_id == "files_seeded":
        _home(state)
        _launcher(state)
        state.write("/home/user/data/report.csv", b"region,total\nnorth,120\nsouth,95\n")
        state.write(
            "/home/user/logs/app.log",
            b"INFO start\nERROR disk full\nINFO retry\nERROR timeout\nWARN slow\nERROR disk full\n",
        )
        state.write("/home/user/notes/todo.txt", b"buy milk\n")
    else:
        raise UnknownSnapshot(f"unknown sim snapshot {snapshot_id!r}")
    return state


SNAPSHOTS = ("blank", "editor_open", "desktop", "files_seeded")


# --------------------------------------------------------------------------- GUI transitions


def _apply_effect(state: SimDesktopState, effect: str) -> None:
    name, _, arg = effect.partition(":")
    if name == "open_window":
        existing = state.window(arg)
        if existing is not None:
            state.focus(existing)
        else:
            state.open_window(arg)
    elif name == "close_window":
        if state.focused is not None:
            state.close_window(state.focused)
    elif name == "focus":
        target = state.window(arg)
        if target is not None:
            state.focus(target)


def _insert_text(win: Window | None, text: str) -> None:
    if win is not None and win.kind in TEXT_KINDS:
        win.buffer += text
        if win.kind == "editor":
            win.saved = False


def _save(state: SimDesktopState, editor: Window, path: str) -> bool:
    if not path.startswith("/"):
        return False
    try:
        state.write(path, editor.buffer.encode())
    except OSError:
        return False
    editor.file_path = path
    editor.saved = True
    return True


def _hotkey(state: SimDesktopState, keys: tuple[str, ...]) -> None:
    win = state.focused
    mods = frozenset(k for k in keys if k in ("ctrl", "alt", "shift", "super"))
    rest = [k for k in keys if k not in mods]
    if len(rest) != 1:
        return
    key = rest[0]
    if mods == {"ctrl"}:
        if key == "s" and win is not None and win.kind == "editor":
            if win.file_path and _save(state, win, win.file_path):
                return
            if state.window("Save As") is None:
                state.open_window("Save As", "dialog", parent=win.title)
        elif key == "c" and win is not None:
            state.clipboard = win.buffer.encode()
        elif key == "v":
            _insert_text(win, state.clipboard.decode("utf-8", "replace"))
        return
    if mods == {"alt"} and key == "f4":
        if win is not None:
            state.close_window(win)
        return
    if mods:
        if mods == {"shift"} and len(key) == 1:
            _insert_text(win, key.upper())
        return
    if key == "tab" and len(state.windows) > 1:
        state.focus(state.windows[0])
    elif key == "enter":
        if win is not None and win.kind == "dialog":
            parent = state.window(win.parent) if win.parent else None
            if parent is not None and _save(state, parent, win.buffer.strip()):
                state.close_window(win)
                state.focus(parent)
        else:
            _insert_text(win, "\n")
    elif key == "esc":
        if win is not None and win.kind == "dialog":
            state.close_window(win)
    elif key == "backspace":
        if win is not None and win.kind in TEXT_KINDS and win.buffer:
            win.buffer = win.buffer[:-1]
            if win.kind == "editor":
                win.saved = False
    elif key == "space":
        _insert_text(win, " ")
    elif len(key) == 1:
        _insert_text(win, key)


def apply_gui_action(state: SimDesktopState, action: GuiAction) -> None:
    """Transition table for GUI input events."""
    if isinstance(action, MoveMouse):
        state.cursor = (action.x, action.y)
    elif isinstance(action, Click):
        state.cursor = (action.x, action.y)
        for win in reversed(state.windows):
            if win.contains(action.x, action.y):
                if not win.focused:
                    state.focus(win)
                if action.button == "left":
                    for widget in win.widgets:
                        if widget.contains(action.x, action.y):
                            _apply_effect(state, widget.effect)
                            break
                break
    elif isinstance(action, TypeText):
        _insert_text(state.focused, action.text)
    elif isinstance(action, Hotkey):
        _hotkey(state, action.keys)
    else:
        raise MalformedAction(f"cannot perform {action!r}")


# --------------------------------------------------------------------------- scripts

_COMMANDS = ("echo", "write_file", "read_file", "list_dir", "mkdir", "rm", "sleep", "exit")


class _ScriptExit(Exception):
    def __init__(self, code: int):
        self.code = code


class _Unsupported(Exception):
    pass


class _Timeout(Exception):
    pass


class _ScriptRunner:
    def __init__(self, state: SimDesktopState, timeout: float):
        self.state = state
        self.timeout = timeout
        self.elapsed = 0.0
        self.out: list[str] = []

    def _abs(self, path: Any) -> str:
        path = str(path)
        if not path.startswith("/"):
            path = "/" + path
        return posixpath.normpath(path)

    def run(self, name: str, args: list[Any], redirect: tuple[str, str] | None = None) -> None:
        if name == "echo":
            newline = True
            if args and args[0] == "-n":
                args, newline = args[1:], False
            text = " ".join(str(a) for a in args) + ("\n" if newline else "")
            if redirect:
                op, target = redirect
                self.state.write(self._abs(target), text.encode(), append=op == ">>")
            else:
                self.out.append(text)
        elif name == "write_file":
            if len(args) != 2:
                raise TypeError("write_file takes PATH CONTENT")
            self.state.write(self._abs(args[0]), str(args[1]).encode())
        elif name == "read_file":
            if len(args) != 1:
                raise TypeError("read_file takes PATH")
            self.out.append(self.state.read(self._abs(args[0])).decode("utf-8", "replace"))
        elif name == "list_dir":
            path = self._abs(args[0]) if args else "/"
            self.out.extend(f"{n}\n" for n in self.state.listdir(path))
        elif name == "mkdir":
            paths = [a for a in args if a != "-p"]
            if not paths:
                raise TypeError("mkdir takes PATH")
            for p in paths:
                self.state.ensure_dir(self._abs(p))
        elif name == "rm":
            flags = {a for a in args if str(a).startswith("-")}
            paths = [a for a in args if not str(a).startswith("-")]
            recursive = any("r" in f for f in flags)
            force = any("f" in f for f in flags)
            for p in paths:
                try:
                    self.state.remove(self._abs(p), recursive=recursive)
                except FileNotFoundError:
                    if not force:
                        raise
        elif name == "sleep":
            self.elapsed += float(args[0]) if args else 0.0
            if self.elapsed > self.timeout:
                raise _Timeout()
        elif name == "exit":
            raise _ScriptExit(int(args[0]) if args else 0)
        else:
            raise _Unsupported(name)

    # bash spelling

    def run_bash(self, source: str) -> None:
        pending = ""
        for raw in source.splitlines():
            line = pending + raw if pending else raw.strip()
            if not line or line.startswith("#"):
                continue
            lexer = shlex.shlex(line, posix=True, punctuation_chars=";&|<>")
            lexer.whitespace_split = True
            try:
                tokens = list(lexer)
            except ValueError:
                # unterminated quote: the string continues on the next line
                pending = line + "\n"
                continue
            pending = ""
            command: list[str] = []
            for tok in tokens + [";"]:
                if tok in (";", "&&"):
                    if command:
                        self._bash_command(command)
                    command = []
                elif tok in ("|", "||", "&", "<"):
                    raise _Unsupported(tok)
                else:
                    command.append(tok)
        if pending:
            raise SyntaxError("unterminated quoted string")

    def _bash_command(self, words: list[str]) -> None:
        redirect = None
        for op in (">>", ">"):
            if op in words:
                i = words.index(op)
                if i + 1 >= len(words):
                    raise SyntaxError(f"missing redirect target after {op}")
                redirect = (op, words[i + 1])
                words = words[:i] + words[i + 2:]
                break
        name, args = words[0], words[1:]
        if redirect and name != "echo":
            raise _Unsupported(f"{name} with redirection")
        self.run(name, args, redirect)

    # python spelling

    def run_python(self, source: str) -> None:
        tree = ast.parse(source)
        for stmt in tree.body:
            if isinstance(stmt, ast.Import) and all(a.name in ("sys", "os") for a in stmt.names):
                continue
            if not (isinstance(stmt, ast.Expr) and isinstance(stmt.value, ast.Call)):
                raise _Unsupported(type(stmt).__name__)
            call = stmt.value
            func = call.func
            if isinstance(func, ast.Attribute) and isinstance(func.value, ast.Name) and func.value.id == "sys" and func.attr == "exit":
                name = "exit"
            elif isinstance(func, ast.Name):
                name = func.id
            else:
                raise _Unsupported(ast.unparse(func))
            try:
                args = [ast.literal_eval(a) for a in call.args]
                kwargs = {k.arg: ast.literal_eval(k.value) for k in call.keywords}
            except ValueError:
                raise _Unsupported(f"{name} with non-literal arguments") from None
            if name == "print":
                sep, end = kwargs.pop("sep", " "), kwargs.pop("end", "\n")
                if kwargs:
                    raise _Unsupported(f"print with {sorted(kwargs)}")
                self.out.append(sep.join(str(a) for a in args) + end)
                continue
            if kwargs:
                raise _Unsupported(f"{name} with keyword arguments")
            if name == "echo":
                self.out.append(" ".join(str(a) for a in args) + "\n")
                continue
            self.run(name, args)


def run_sim_script(state: SimDesktopState, action: CodeAction, timeout: float) -> ExecResult:
    runner = _ScriptRunner(state, timeout)
    exit_code, stderr, timed_out = 0, "", False
    try:
        if action.language == "bash":
            runner.run_bash(action.source)
        else:
            runner.run_python(action.source)
    except _ScriptExit as exc:
        exit_code = exc.code
    except _Timeout:
        exit_code, timed_out = TIMEOUT_EXIT_CODE, True
        stderr = f"sim: script exceeded timeout of {timeout:g}s"
    except _Unsupported as exc:
        exit_code = UNSUPPORTED_EXIT
        stderr = f"sim: unsupported command {str(exc)!r}; sim scripts accept only: {', '.join(_COMMANDS)}"
    except SyntaxError as exc:
        exit_code, stderr = 2 if action.language == "bash" else 1, f"SyntaxError: {exc}"
    except (OSError, TypeError, ValueError) as exc:
        exit_code, stderr = 1, f"{type(exc).__name__}: {exc}"
    stdout, out_cut = truncate_output("".join(runner.out))
    stderr, err_cut = truncate_output(stderr + ("\n" if stderr else ""))
    return ExecResult(exit_code, stdout, stderr, timed_out, runner.elapsed, out_cut, err_cut)


# --------------------------------------------------------------------------- session


class SimDesktop(EnvironmentSession):
    """EnvironmentSession backed by :class:`SimDesktopState` and the raster renderer."""

    def __init__(self, snapshot: str = "blank", seed: int = 0, screen: tuple[int, int] = DEFAULT_SCREEN):
        self.seed = seed
        self.screen = screen
        self.session_id = f"sim-{seed}"
        self.snapshot = snapshot
        self.state = make_fixture(snapshot, seed, screen)

    def _observe(self, prefix: str | None = None) -> Observation:
        from .render import render_png_cached
        from ..protocol import Screenshot

        png = render_png_cached(self.state)
        width, height = self.state.screen
        text = self.state.digest_text()
        if prefix is not None:
            text = prefix + "\n" + text
        return Observation(Screenshot(png, width, height), text)

    def execute_script(self, action: CodeAction, timeout: float = DEFAULT_SCRIPT_TIMEOUT):
        result = run_sim_script(self.state, action, timeout)
        return result, self._observe(f"exit_code={result.exit_code}")

    def perform_action(self, action: GuiAction) -> Observation:
        if isinstance(action, Terminate):
            raise MalformedAction("terminate is not dispatched to the environment")
        check_bounds(action, self.screen)
        apply_gui_action(self.state, action)
        return self._observe()

    def capture_screenshot(self) -> Observation:
        return self._observe()

    def reset(self, snapshot_id: str) -> "SimDesktop":
        self.state = make_fixture(snapshot_id, self.seed, self.screen)
        self.snapshot = snapshot_id
        return self

    def read_file(self, path: str) -> bytes | None:
        try:
            return self.state.read(path)
        except OSError:
            return None

    def snapshot_state(self) -> SimDesktopState:
        return copy.deepcopy(self.state)
