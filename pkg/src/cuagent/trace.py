"""Append-only interaction log.

On disk a trace directory holds ``trace.jsonl`` (one StepRecord per line, flushed per
record) and ``screenshots/<sha256>.png`` referenced from the records.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from .protocol import CodeAction, ExecResult, GuiAction, Observation, Role, gui_action_to_dict

TRACE_FILE = "trace.jsonl"
SCREENSHOT_DIR = "screenshots"
EXCERPT_CHARS = 200


def code_envelope(actions: Sequence[CodeAction], results: Sequence[ExecResult]) -> dict[str, Any]:
    return {
        "kind": "code",
        "scripts": [a.to_dict() for a in actions],
        "results": [{"exit_code": r.exit_code, "timed_out": r.timed_out} for r in results],
    }


def gui_envelope(action: GuiAction) -> dict[str, Any]:
    return {"kind": "gui", **gui_action_to_dict(action)}


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class StepRecord:
    seq: int
    actor: str
    action: dict[str, Any]
    observation_digest: dict[str, str]
    subtask_index: int
    wall_time: float

    @property
    def kind(self) -> str:
        return self.action["kind"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "actor": self.actor,
            "action": self.action,
            "observation_digest": self.observation_digest,
            "subtask_index": self.subtask_index,
            "wall_time": self.wall_time,
        }

    def comparable(self) -> str:
        """Canonical encoding with timing removed, for replay comparison."""
        data = self.to_dict()
        del data["wall_time"]
        return canonical_json(data)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StepRecord":
        return cls(
            seq=int(data["seq"]),
            actor=str(data["actor"]),
            action=dict(data["action"]),
            observation_digest=dict(data["observation_digest"]),
            subtask_index=int(data["subtask_index"]),
            wall_time=float(data["wall_time"]),
        )


class Trace:
    """Thread-safe StepRecord log, optionally mirrored to a directory."""

    def __init__(self, directory: str | Path | None = None):
        self.records: list[StepRecord] = []
        self._lock = threading.Lock()
        self.directory = Path(directory) if directory is not None else None
        self._fh = None
        if self.directory is not None:
            (self.directory / SCREENSHOT_DIR).mkdir(parents=True, exist_ok=True)
            self._fh = open(self.directory / TRACE_FILE, "w", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def record(
        self,
        actor: Role,
        action: dict[str, Any],
        observation: Observation,
        subtask_index: int,
        wall_time: float,
    ) -> StepRecord:
        shot = observation.screenshot
        with self._lock:
            rec = StepRecord(
                seq=len(self.records) + 1,
                actor=Role(actor).value,
                action=action,
                observation_digest={
                    "sha256": shot.digest,
                    "text_excerpt": (observation.text or "")[:EXCERPT_CHARS],
                },
                subtask_index=subtask_index,
                wall_time=round(wall_time, 6),
            )
            self.records.append(rec)
            if self._fh is not None:
                png_path = self.directory / SCREENSHOT_DIR / f"{shot.digest}.png"
                if not png_path.exists():
                    png_path.write_bytes(shot.png)
                self._fh.write(canonical_json(rec.to_dict()) + "\n")
                self._fh.flush()
        return rec

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "Trace":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def load_trace(path: str | Path) -> list[StepRecord]:
    """Read StepRecords from a trace directory or a ``trace.jsonl`` file."""
    path = Path(path)
    if path.is_dir():
        path = path / TRACE_FILE
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(StepRecord.from_dict(json.loads(line)))
    return records


def first_divergence(a: Iterable[StepRecord], b: Iterable[StepRecord]) -> tuple[int, str] | None:
    """Return (seq, description) of the first differing record ignoring timings, or None."""
    a, b = list(a), list(b)
    for i, (ra, rb) in enumerate(zip(a, b), start=1):
        if ra.comparable() != rb.comparable():
            return i, f"record {i} differs:\n  recorded: {ra.comparable()}\n  replayed: {rb.comparable()}"
    if len(a) != len(b):
        n = min(len(a), len(b)) + 1
        return n, f"record count differs: recorded {len(a)}, replayed {len(b)}"
    return None
