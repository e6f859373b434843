"""Task file format (JSON, versioned).

    {
      "schema_version": 1,
      "id": "create-file",
      "instruction": "Create /home/user/a.txt containing hello",
      "env_context": {"user": "user"},
      "budgets": {"programmer_max_rounds": 20, "gui_max_steps": 25, "orchestrator_max_rounds": 15},
      "evaluator": {"file_exists": "/home/user/a.txt"},
      "domain": "os",
      "snapshot": "blank"
    }

Only ``id`` and ``instruction`` are required.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .errors import ParseError
from .evaluator import expr_to_dict, parse_evaluator
from .protocol import Budgets, TaskSpec

SCHEMA_VERSION = 1
_FIELDS = {"schema_version", "id", "instruction", "env_context", "budgets", "evaluator", "domain", "snapshot"}


def task_from_dict(data: dict[str, Any]) -> TaskSpec:
    if not isinstance(data, dict):
        raise ValueError("task file must contain a JSON object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported task schema_version {version!r}")
    unknown = set(data) - _FIELDS
    if unknown:
        raise ValueError(f"unknown task fields: {sorted(unknown)}")
    for key in ("id", "instruction"):
        if not isinstance(data.get(key), str):
            raise ValueError(f"task field {key!r} must be a string")
    ctx = data.get("env_context") or {}
    if not isinstance(ctx, dict):
        raise ValueError("env_context must be an object")
    evaluator = data.get("evaluator")
    if evaluator is not None:
        try:
            evaluator = parse_evaluator(evaluator)
        except ParseError as exc:
            raise ValueError(f"bad evaluator: {exc}") from exc
    return TaskSpec(
        id=data["id"],
        instruction=data["instruction"],
        env_context={str(k): str(v) for k, v in ctx.items()},
        budgets=Budgets.from_dict(data.get("budgets")),
        evaluator=evaluator,
        domain=str(data.get("domain", "os")),
        snapshot=data.get("snapshot"),
    )


def task_to_dict(task: TaskSpec) -> dict[str, Any]:
    data: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "id": task.id,
        "instruction": task.instruction,
        "env_context": dict(task.env_context),
        "budgets": task.budgets.to_dict(),
        "domain": task.domain,
    }
    if task.evaluator is not None:
        data["evaluator"] = expr_to_dict(task.evaluator)
    if task.snapshot is not None:
        data["snapshot"] = task.snapshot
    return data


def load_task(path: str | Path) -> TaskSpec:
    with open(path, encoding="utf-8") as fh:
        return task_from_dict(json.load(fh))


def save_task(task: TaskSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(task_to_dict(task), indent=2) + "\n", encoding="utf-8")
