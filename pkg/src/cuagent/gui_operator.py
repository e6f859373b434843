"""GUI agent <-> GUI action interpreter loop for one subtask.

Prompt contract: every reply carries exactly one JSON action object (see
``cuagent.protocol``); the interpreter answers each dispatched action with a fresh
screenshot. A ``terminate`` action ends the subtask and its message is handed to
the orchestrator verbatim.
"""

from __future__ import annotations

import time

from .backends import ModelBackend
from .environment.base import EnvironmentSession
from .errors import ActionError, BackendError, EnvironmentUnreachable, HarnessError
from .programmer import render_context
from .protocol import (
    Conversation,
    GuiAction,
    Observation,
    Role,
    Screenshot,
    SubtaskAssignment,
    Terminate,
    Worker,
    WorkerOutcome,
    WorkerReport,
    check_bounds,
    describe_gui_action,
    parse_gui_action,
)
from .trace import Trace, gui_envelope

MAX_MALFORMED_STREAK = 2

SYSTEM_PROMPT = """\
You operate a computer through its screen. Each turn you see the latest screenshot
and reply with exactly one JSON action object, one of:
  {"type": "move", "x": X, "y": Y}
  {"type": "click", "x": X, "y": Y, "button": "left"|"right"|"middle", "count": 1|2}
  {"type": "hotkey", "keys": ["ctrl", "s"]}
  {"type": "type", "text": "..."}
  {"type": "terminate", "message": "..."}
Coordinates are screen pixels. Key names: a-z, 0-9, f1-f12, ctrl, alt, shift, super,
enter, esc, tab, up, down, left, right, space, backspace, delete.
When the subtask is complete, terminate with a message containing any requested information.
"""


def render_gui_assignment(assignment: SubtaskAssignment) -> str:
    lines = [f"Subtask: {assignment.instruction}"]
    if ctx := render_context(assignment.env_context):
        lines.append(ctx)
    if assignment.required_info:
        lines.append(f"When you terminate, your message must include: {assignment.required_info}")
    return "\n".join(lines)


def dispatch_action(action: GuiAction, env: EnvironmentSession, screen: tuple[int, int],
                    conversation: Conversation | None = None) -> Observation:
    """Send one non-terminate action and append the interpreter's screenshot reply."""
    if isinstance(action, Terminate):
        raise ValueError("terminate actions are not dispatched")
    check_bounds(action, screen)
    obs = env.perform_action(action)
    if conversation is not None:
        text = f"Executed {describe_gui_action(action)}."
        if obs.text:
            text += "\n" + obs.text
        conversation.append(Role.GUI_INTERPRETER, text, [obs.screenshot])
    return obs


def exhaustion_notice(max_steps: int, actions: list[GuiAction]) -> str:
    recent = "; ".join(describe_gui_action(a) for a in actions[-3:]) or "none"
    return (f"GUI operator stopped: step budget of {max_steps} actions exhausted without a "
            f"terminate signal. Last actions: {recent}.")


def run_gui_subtask(
    assignment: SubtaskAssignment,
    env: EnvironmentSession,
    model: ModelBackend,
    max_steps: int,
    *,
    screenshot: Screenshot | None = None,
    trace: Trace | None = None,
    subtask_index: int = 0,
    conversation: Conversation | None = None,
) -> WorkerReport:
    if assignment.worker != Worker.GUI_OPERATOR:
        raise ValueError("assignment is not for the GUI operator")
    conv = conversation if conversation is not None else Conversation(Role.GUI_AGENT)
    if len(conv):
        raise ValueError("GUI subtasks must start from an empty conversation")
    if screenshot is None:
        screenshot = env.capture_screenshot().screenshot
    latest = screenshot
    conv.append(Role.SYSTEM, SYSTEM_PROMPT)
    conv.append(Role.GUI_INTERPRETER, render_gui_assignment(assignment), [screenshot])

    dispatched: list[GuiAction] = []
    malformed = 0

    def report(message: str, outcome: WorkerOutcome, error: str | None = None, fatal: bool = False) -> WorkerReport:
        return WorkerReport(Worker.GUI_OPERATOR, message, latest, len(dispatched), outcome, error=error, fatal=fatal)

    while True:
        if len(dispatched) >= max_steps:
            return report(exhaustion_notice(max_steps, dispatched), WorkerOutcome.BUDGET_EXHAUSTED)
        try:
            reply = model.chat(conv)
        except HarnessError:
            raise
        except BackendError as exc:
            error = f"GUI backend failed: {exc}"
            return report(error, WorkerOutcome.ERROR, error)
        conv.append(Role.GUI_AGENT, reply)

        try:
            action = parse_gui_action(reply, latest.size)
        except ActionError as exc:
            malformed += 1
            if malformed >= MAX_MALFORMED_STREAK:
                error = f"{malformed} consecutive malformed actions; last: {exc}"
                return report(f"GUI operator failed: {error}", WorkerOutcome.ERROR, error)
            conv.append(Role.GUI_INTERPRETER,
                        f"Could not use that action: {exc}. Reply with exactly one valid JSON action object.")
            continue
        if isinstance(action, Terminate):
            return report(action.message, WorkerOutcome.COMPLETED)

        started = time.monotonic()
        try:
            obs = dispatch_action(action, env, latest.size, conv)
        except EnvironmentUnreachable as exc:
            error = f"environment unreachable: {exc}"
            return report(f"GUI operator failed: {error}", WorkerOutcome.ERROR, error, fatal=True)
        except ActionError as exc:
            # rejected by the environment itself; same policy as a parse failure
            malformed += 1
            if malformed >= MAX_MALFORMED_STREAK:
                error = f"{malformed} consecutive malformed actions; last: {exc}"
                return report(f"GUI operator failed: {error}", WorkerOutcome.ERROR, error)
            conv.append(Role.GUI_INTERPRETER, f"The environment rejected that action: {exc}.")
            continue
        malformed = 0
        dispatched.append(action)
        latest = obs.screenshot
        if trace is not None:
            trace.record(Role.GUI_INTERPRETER, gui_envelope(action), obs, subtask_index, time.monotonic() - started)
