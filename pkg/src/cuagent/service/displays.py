"""Screen capture / input injection seam for the interp service."""

from __future__ import annotations

import os
import shutil
import subprocess
import threading
from functools import cached_property
from typing import Protocol

from ..png import png_dimensions, solid_png
from ..protocol import DEFAULT_SCREEN, Click, GuiAction, Hotkey, MoveMouse, TypeText


class Display(Protocol):
    available: bool
    screen: tuple[int, int]

    def capture(self) -> bytes | None: ...

    def inject(self, action: GuiAction) -> None: ...

    def reset(self, snapshot_id: str) -> None: ...

    def knows_snapshot(self, snapshot_id: str) -> bool: ...


class NoDisplay:
    """Headless host: scripts still run, screenshots are a flat gray placeholder."""

    available = False

    def __init__(self, screen: tuple[int, int] = DEFAULT_SCREEN):
        self.screen = screen

    def capture(self) -> bytes | None:
        return None

    def inject(self, action: GuiAction) -> None:
        raise RuntimeError("no display available")

    def reset(self, snapshot_id: str) -> None:
        pass

    def knows_snapshot(self, snapshot_id: str) -> bool:
        return False


class SimDisplay:
    """Serves the simulated desktop through the real wire protocol (integration tests, demos)."""

    available = True

    def __init__(self, snapshot: str = "desktop", seed: int = 0, screen: tuple[int, int] = DEFAULT_SCREEN):
        from ..environment.sim import SimDesktop

        self.desktop = SimDesktop(snapshot, seed, screen)
        self.screen = screen
        self._lock = threading.Lock()

    def capture(self) -> bytes:
        with self._lock:
            return self.desktop.capture_screenshot().screenshot.png

    def inject(self, action: GuiAction) -> None:
        with self._lock:
            self.desktop.perform_action(action)

    def reset(self, snapshot_id: str) -> None:
        if self.knows_snapshot(snapshot_id):
            with self._lock:
                self.desktop.reset(snapshot_id)

    def knows_snapshot(self, snapshot_id: str) -> bool:
        from ..environment.sim import SNAPSHOTS

        return snapshot_id in SNAPSHOTS


_XDOTOOL_KEYS = {
    "enter": "Return", "esc": "Escape", "tab": "Tab", "space": "space",
    "backspace": "BackSpace", "delete": "Delete", "up": "Up", "down": "Down",
    "left": "Left", "right": "Right", "super": "super", "ctrl": "ctrl",
    "alt": "alt", "shift": "shift",
}
_BUTTONS = {"left": "1", "middle": "2", "right": "3"}


class XDisplay:
    """X11 desktop driven by ``xdotool``; captured with ImageMagick ``import``."""

    def __init__(self, display: str | None = None):
        self.env = dict(os.environ)
        if display:
            self.env["DISPLAY"] = display

    @property
    def available(self) -> bool:  # type: ignore[override]
        return bool(self.env.get("DISPLAY")) and shutil.which("xdotool") is not None and shutil.which("import") is not None

    @cached_property
    def screen(self) -> tuple[int, int]:  # type: ignore[override]
        png = self.capture()
        return png_dimensions(png) if png else DEFAULT_SCREEN

    def _run(self, *args: str) -> bytes:
        return subprocess.run(args, env=self.env, check=True, capture_output=True, timeout=30).stdout

    def capture(self) -> bytes | None:
        if not self.available:
            return None
        return self._run("import", "-window", "root", "png:-")

    def inject(self, action: GuiAction) -> None:
        if isinstance(action, MoveMouse):
            self._run("xdotool", "mousemove", str(action.x), str(action.y))
        elif isinstance(action, Click):
            self._run("xdotool", "mousemove", str(action.x), str(action.y), "click",
                      "--repeat", str(action.count), _BUTTONS[action.button])
        elif isinstance(action, Hotkey):
            combo = "+".join(_XDOTOOL_KEYS.get(k, k.upper() if k.startswith("f") and k[1:].isdigit() else k) for k in action.keys)
            self._run("xdotool", "key", combo)
        elif isinstance(action, TypeText):
            self._run("xdotool", "type", "--delay", "0", "--", action.text)

    def reset(self, snapshot_id: str) -> None:
        pass

    def knows_snapshot(self, snapshot_id: str) -> bool:
        return False


_PLACEHOLDERS: dict[tuple[int, int], bytes] = {}


def placeholder_png(screen: tuple[int, int]) -> bytes:
    """Flat gray frame at the configured screen size, sent when nothing can be captured."""
    if screen not in _PLACEHOLDERS:
        _PLACEHOLDERS[screen] = solid_png(screen[0], screen[1], (128, 128, 128))
    return _PLACEHOLDERS[screen]
