"""Synthetic raster for the simulated desktop.

Windows are drawn as bordered rectangles with title bars, widgets as labelled boxes,
and every character as a fixed-width colored block. The cursor is metadata only and
is not drawn. The image is a pure function of the visible state.
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict

import numpy as np

from ..png import encode_indexed
from .sim import TITLE_BAR, SimDesktopState, Window

CELL_W, CELL_H = 8, 14

BG, BODY, TITLE, TITLE_FOCUSED, BORDER, WIDGET, WIDGET_BORDER, DIALOG, UNSAVED = range(9)
GLYPH_BASE = 16


def _palette(seed: int) -> np.ndarray:
    pal = np.zeros((256, 3), dtype=np.uint8)
    pal[BG] = (20 + seed * 53 % 60, 60 + seed * 29 % 60, 100 + seed * 17 % 80)
    pal[BODY] = (236, 236, 236)
    pal[TITLE] = (150, 150, 150)
    pal[TITLE_FOCUSED] = (50, 90, 160)
    pal[BORDER] = (40, 40, 40)
    pal[WIDGET] = (200, 210, 230)
    pal[WIDGET_BORDER] = (80, 80, 80)
    pal[DIALOG] = (250, 245, 220)
    pal[UNSAVED] = (200, 60, 60)
    idx = np.arange(GLYPH_BASE, 256)
    pal[GLYPH_BASE:, 0] = (idx * 67) % 200
    pal[GLYPH_BASE:, 1] = (idx * 31) % 200
    pal[GLYPH_BASE:, 2] = (idx * 97) % 200
    return pal


def _glyph_color(ch: str) -> int:
    return GLYPH_BASE + (ord(ch) * 37) % (256 - GLYPH_BASE)


class _Canvas:
    def __init__(self, width: int, height: int):
        self.px = np.full((height, width), BG, dtype=np.uint8)
        self.w, self.h = width, height

    def fill(self, x: int, y: int, w: int, h: int, color: int) -> None:
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + w, self.w), min(y + h, self.h)
        if x1 > x0 and y1 > y0:
            self.px[y0:y1, x0:x1] = color

    def frame(self, x: int, y: int, w: int, h: int, color: int) -> None:
        self.fill(x, y, w, 1, color)
        self.fill(x, y + h - 1, w, 1, color)
        self.fill(x, y, 1, h, color)
        self.fill(x + w - 1, y, 1, h, color)

    def text(self, x: int, y: int, text: str, max_w: int, max_h: int) -> None:
        cols = max(max_w // CELL_W, 1)
        rows = max(max_h // CELL_H, 0)
        row = col = 0
        for ch in text:
            if row >= rows:
                return
            if ch == "\n":
                row, col = row + 1, 0
                continue
            if col >= cols:
                row, col = row + 1, 0
                if row >= rows:
                    return
            if not ch.isspace():
                self.fill(x + col * CELL_W + 1, y + row * CELL_H + 2, CELL_W - 2, CELL_H - 4, _glyph_color(ch))
            col += 1


def _body_text(state: SimDesktopState, win: Window) -> str:
    if win.kind in ("editor", "dialog"):
        return win.buffer
    if win.kind == "files":
        try:
            return "\n".join(state.listdir("/home/user"))
        except OSError:
            return ""
    return ""


def _draw_window(canvas: _Canvas, state: SimDesktopState, win: Window) -> None:
    x, y, w, h = win.rect
    canvas.fill(x, y, w, h, DIALOG if win.kind == "dialog" else BODY)
    canvas.frame(x, y, w, h, BORDER)
    canvas.fill(x + 1, y + 1, w - 2, TITLE_BAR - 1, TITLE_FOCUSED if win.focused else TITLE)
    canvas.text(x + 8, y + 7, win.title, w - 40, CELL_H)
    if win.kind == "editor" and not win.saved:
        canvas.fill(x + w - 20, y + 8, 12, 12, UNSAVED)
    for widget in win.widgets:
        wx, wy, ww, wh = widget.rect
        canvas.fill(wx, wy, ww, wh, WIDGET)
        canvas.frame(wx, wy, ww, wh, WIDGET_BORDER)
        canvas.text(wx + 6, wy + (wh - CELL_H) // 2, widget.label, ww - 12, CELL_H)
    canvas.text(x + 10, y + TITLE_BAR + 8, _body_text(state, win), w - 20, h - TITLE_BAR - 16)


def render_pixels(state: SimDesktopState) -> np.ndarray:
    width, height = state.screen
    canvas = _Canvas(width, height)
    for win in state.windows:
        _draw_window(canvas, state, win)
    return canvas.px


def render_png(state: SimDesktopState) -> bytes:
    return encode_indexed(render_pixels(state), _palette(state.rng_seed))


def _render_key(state: SimDesktopState) -> str:
    digest = state.digest()
    digest.pop("cursor")
    files_open = any(w.kind == "files" for w in state.windows)
    listing = _body_text(state, Window("", "files", (0, 0, 0, 0))) if files_open else None
    return json.dumps([state.screen, state.rng_seed, digest, listing], sort_keys=True)


_CACHE: OrderedDict[str, bytes] = OrderedDict()
_CACHE_SIZE = 128
_CACHE_LOCK = threading.Lock()


def render_png_cached(state: SimDesktopState) -> bytes:
    key = _render_key(state)
    with _CACHE_LOCK:
        if key in _CACHE:
            _CACHE.move_to_end(key)
            return _CACHE[key]
    png = render_png(state)
    with _CACHE_LOCK:
        _CACHE[key] = png
        if len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    return png
