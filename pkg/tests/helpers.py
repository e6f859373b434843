"""Shared builders for scripted-backend plans."""

from __future__ import annotations

import json

from cuagent.backends import BackendSet, ModelBackend, ScriptedBackend
from cuagent.protocol import Budgets


def assign(worker: str, instruction: str, required_info: str | None = None, **env_context) -> str:
    body = {"action": "assign", "worker": worker, "instruction": instruction, "env_context": env_context}
    if required_info:
        body["required_info"] = required_info
    return json.dumps(body)


def terminate(answer: str = "done", success: bool = True) -> str:
    return json.dumps({"action": "terminate", "answer": answer, "success": success})


def act(kind: str, **fields) -> str:
    return json.dumps({"type": kind, **fields})


def bash(*lines: str, done: bool = True) -> str:
    text = "```bash\n" + "\n".join(lines) + "\n```"
    return text + ("\nTERMINATE" if done else "")


def python(*lines: str, done: bool = True) -> str:
    text = "```python\n" + "\n".join(lines) + "\n```"
    return text + ("\nTERMINATE" if done else "")


def backends(orchestrator=(), programmer=(), gui=(), summary="summary of the subtask") -> BackendSet:
    return BackendSet(
        orchestrator=ScriptedBackend.sequence(orchestrator, then=terminate("fallback", False), name="orchestrator"),
        programmer=ScriptedBackend.sequence(programmer, then="TERMINATE", name="programmer"),
        gui=ScriptedBackend.sequence(gui, then=act("terminate", message="fallback"), name="gui"),
        summarizer=ScriptedBackend.sequence([], then=summary, name="summarizer"),
    )


DEFAULT_BUDGETS = Budgets()

# launcher widget centres on the desktop fixtures
TEXT_EDITOR_ICON = (120, 130)
FILES_ICON = (120, 230)


def gui_create_file(path: str, content: str) -> list[str]:
    """Five GUI actions that save ``content`` to ``path`` via the Save As dialog, then terminate."""
    x, y = TEXT_EDITOR_ICON
    return [
        act("click", x=x, y=y),
        act("type", text=content),
        act("hotkey", keys=["ctrl", "s"]),
        act("type", text=path),
        act("hotkey", keys=["enter"]),
        act("terminate", message=f"saved {path}"),
    ]


class RandomReplies(ModelBackend):
    """Backend that draws every reply from ``choices`` with a seeded RNG."""

    def __init__(self, rng, choices):
        self.rng = rng
        self.choices = list(choices)
        self.calls = 0

    def chat(self, conversation, role_config=None):
        self.calls += 1
        return self.rng.choice(self.choices)


def adversarial_backends(rng) -> BackendSet:
    """Backends that mostly never stop: loops, garbage and the occasional valid action."""
    return BackendSet(
        orchestrator=RandomReplies(rng, [assign("programmer", "keep going")] * 4 +
                                   [assign("gui", "keep clicking")] * 4 + ["not json", terminate("x", False)]),
        programmer=RandomReplies(rng, [bash("echo loop", done=False)] * 6 +
                                 [python("print(1)", done=False), "thinking", bash("echo x")]),
        gui=RandomReplies(rng, [act("click", x=5, y=5)] * 6 +
                          [act("type", text="a"), "garbage", act("terminate", message="m")]),
        summarizer=RandomReplies(rng, ["summary"]),
    )


def never_stopping_backends() -> BackendSet:
    """The worst case: every worker consumes its full budget in every round."""
    return BackendSet(
        orchestrator=ScriptedBackend.sequence([], then=assign("gui", "click forever"), name="orchestrator"),
        programmer=ScriptedBackend.sequence([], then=bash("echo loop", done=False), name="programmer"),
        gui=ScriptedBackend.sequence([], then=act("click", x=5, y=5), name="gui"),
        summarizer=ScriptedBackend.sequence([], then="summary", name="summarizer"),
    )
