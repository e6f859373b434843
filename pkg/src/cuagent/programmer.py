"""Coding agent <-> code interpreter loop for one subtask.

Prompt contract: the coding agent answers with fenced ```python / ```bash blocks; all
blocks of one reply run in order as one round (one environment interaction). Each
script is a fresh process. Results come back as exit code plus fenced stdout/stderr
and the latest screenshot. A line consisting of ``TERMINATE`` ends the subtask.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping

from .backends import ModelBackend
from .environment.base import DEFAULT_SCRIPT_TIMEOUT, EnvironmentSession
from .errors import BackendError, EnvironmentUnreachable, HarnessError
from .protocol import (
    CodeAction,
    Conversation,
    ExecResult,
    ImagePart,
    Message,
    Observation,
    Role,
    Screenshot,
    SubtaskAssignment,
    TextPart,
    Worker,
    WorkerOutcome,
    WorkerReport,
    extract_code_blocks,
)
from .trace import Trace, code_envelope

log = logging.getLogger(__name__)

COMPLETION_TOKEN = "TERMINATE"
MAX_IDLE_REPLIES = 3
DIGEST_TAIL = 1000

SYSTEM_PROMPT = f"""\
You are a coding agent operating a computer through scripts.
Solve the assigned subtask by writing Python or Bash. Put each script in a fenced
block whose opening fence names the language (```python or ```bash). All blocks in
one reply run in order, each as a fresh process; you then receive every script's
exit code, stdout and stderr, plus a screenshot of the screen.
Fix problems based on that feedback. When the subtask is done, reply with a short
note and a final line containing only {COMPLETION_TOKEN}.
"""

SUMMARIZER_PROMPT = """\
Summarize the following conversation between a coding agent and a code interpreter
for the planner that assigned the subtask. State what was attempted, what succeeded
or failed, and any file paths, values or errors the planner needs. Be concise.
"""


def render_context(env_context: Mapping[str, str]) -> str:
    if not env_context:
        return ""
    return "Environment:\n" + "\n".join(f"- {k}: {v}" for k, v in env_context.items())


def render_assignment(assignment: SubtaskAssignment) -> str:
    lines = [f"Subtask: {assignment.instruction}"]
    if ctx := render_context(assignment.env_context):
        lines.append(ctx)
    if assignment.required_info:
        lines.append(f"Report back: {assignment.required_info}")
    return "\n".join(lines)


def render_results(actions: list[CodeAction], results: list[ExecResult]) -> str:
    chunks = []
    for i, (action, result) in enumerate(zip(actions, results), start=1):
        head = f"Script {i} ({action.language}) exit_code={result.exit_code}"
        if result.timed_out:
            head += " (timed out)"
        chunks.append(head)
        for name, text, cut in (("stdout", result.stdout, result.stdout_truncated),
                                ("stderr", result.stderr, result.stderr_truncated)):
            label = f"{name} (truncated)" if cut else name
            chunks.append(f"{label}:\n```text\n{text.rstrip()}\n```")
    return "\n".join(chunks)


def signals_completion(reply: str) -> bool:
    outside = reply
    for block in extract_code_blocks(reply):
        outside = outside.replace(block.source, "")
    return any(line.strip() == COMPLETION_TOKEN for line in outside.splitlines())


@dataclass
class ProgrammerRound:
    round_index: int
    model_reply: str
    actions: list[CodeAction] = field(default_factory=list)
    results: list[ExecResult] = field(default_factory=list)
    observation: Observation | None = None
    wall_time: float = 0.0

    @property
    def screenshot(self) -> Screenshot | None:
        return self.observation.screenshot if self.observation else None


def execute_round(reply: str, env: EnvironmentSession, round_index: int = 1,
                  timeout: float = DEFAULT_SCRIPT_TIMEOUT) -> ProgrammerRound:
    """Run every code block of ``reply`` in order.

    A transport failure stops the round; the partially executed round is attached to
    the raised exception as ``partial_round``.
    """
    rnd = ProgrammerRound(round_index, reply)
    started = time.monotonic()
    for action in extract_code_blocks(reply):
        try:
            result, obs = env.execute_script(action, timeout)
        except EnvironmentUnreachable as exc:
            rnd.wall_time = time.monotonic() - started
            exc.partial_round = rnd  # type: ignore[attr-defined]
            raise
        rnd.actions.append(action)
        rnd.results.append(result)
        rnd.observation = obs
    rnd.wall_time = time.monotonic() - started
    return rnd


def request_view(conv: Conversation, keep_images: int) -> Conversation:
    """Copy of ``conv`` where only the newest ``keep_images`` screenshots are kept."""
    view = Conversation(conv.owner)
    kept = 0
    for message in reversed(conv.messages):
        parts = []
        for part in reversed(message.parts):
            if isinstance(part, ImagePart):
                if kept < keep_images:
                    kept += 1
                    view.attachments[part.digest] = conv.attachments[part.digest]
                    parts.append(part)
                else:
                    parts.append(TextPart("[earlier screenshot omitted]"))
            else:
                parts.append(part)
        view.messages.append(Message(message.role, tuple(reversed(parts))))
    view.messages.reverse()
    return view


def digest_conversation(conv: Conversation) -> str:
    """Deterministic stand-in for a model summary."""
    reply = conv.last(Role.CODING_AGENT)
    feedback = conv.last(Role.CODE_INTERPRETER)
    lines = ["Summarizer unavailable; deterministic digest of the subtask."]
    lines.append("Last coding-agent reply:\n" + (reply.text[-DIGEST_TAIL:] if reply else "(none)"))
    if feedback is not None and "exit_code=" in feedback.text:
        lines.append("Last execution result:\n" + feedback.text[-DIGEST_TAIL:])
    else:
        lines.append("No scripts were executed.")
    return "\n".join(lines)


def _summarize(conv: Conversation, summarizer: ModelBackend) -> tuple[str, bool]:
    request = Conversation(Role.SUMMARIZER)
    request.append(Role.SYSTEM, SUMMARIZER_PROMPT)
    transcript = []
    for message in conv:
        if message.role == Role.SYSTEM:
            continue
        shots = " [screenshot]" * len(message.images)
        transcript.append(f"[{message.role.value}]{shots}\n{message.text}")
    request.append(Role.CODE_INTERPRETER, "\n\n".join(transcript) or "(empty)")
    try:
        summary = summarizer.chat(request).strip()
    except HarnessError:
        raise
    except BackendError as exc:
        log.warning("summarizer failed, using digest: %s", exc)
        return digest_conversation(conv), True
    if not summary:
        return digest_conversation(conv), True
    return summary, False


def summarize_conversation(conv: Conversation, summarizer: ModelBackend) -> str:
    if not len(conv):
        raise ValueError("cannot summarize an empty conversation")
    return _summarize(conv, summarizer)[0]


def run_programmer_subtask(
    assignment: SubtaskAssignment,
    env: EnvironmentSession,
    model: ModelBackend,
    summarizer: ModelBackend,
    max_rounds: int,
    *,
    screenshot: Screenshot | None = None,
    trace: Trace | None = None,
    subtask_index: int = 0,
    timeout: float = DEFAULT_SCRIPT_TIMEOUT,
    attach_screenshot: bool = True,
    conversation: Conversation | None = None,
) -> WorkerReport:
    if assignment.worker != Worker.PROGRAMMER:
        raise ValueError("assignment is not for the programmer")
    conv = conversation if conversation is not None else Conversation(Role.CODING_AGENT)
    if len(conv):
        raise ValueError("programmer subtasks must start from an empty conversation")
    if screenshot is None:
        screenshot = env.capture_screenshot().screenshot
    latest = screenshot
    conv.append(Role.SYSTEM, SYSTEM_PROMPT)
    conv.append(Role.CODE_INTERPRETER, render_assignment(assignment), [screenshot] if attach_screenshot else [])

    interactions = 0
    idle = 0
    outcome = WorkerOutcome.BUDGET_EXHAUSTED
    error: str | None = None
    fatal = False

    for round_index in range(1, max_rounds + 1):
        try:
            reply = model.chat(request_view(conv, 1 if attach_screenshot else 0))
        except HarnessError:
            raise
        except BackendError as exc:
            outcome, error = WorkerOutcome.ERROR, f"coding backend failed: {exc}"
            break
        conv.append(Role.CODING_AGENT, reply)
        done = signals_completion(reply)

        try:
            rnd = execute_round(reply, env, round_index, timeout)
        except EnvironmentUnreachable as exc:
            rnd = exc.partial_round  # type: ignore[attr-defined]
            if rnd.actions:
                interactions += 1
                if trace is not None:
                    trace.record(Role.CODE_INTERPRETER, code_envelope(rnd.actions, rnd.results),
                                 rnd.observation, subtask_index, rnd.wall_time)
            outcome, error, fatal = WorkerOutcome.ERROR, f"environment unreachable: {exc}", True
            break

        if rnd.actions:
            idle = 0
            interactions += 1
            latest = rnd.observation.screenshot
            if trace is not None:
                trace.record(Role.CODE_INTERPRETER, code_envelope(rnd.actions, rnd.results),
                             rnd.observation, subtask_index, rnd.wall_time)
            conv.append(Role.CODE_INTERPRETER, render_results(rnd.actions, rnd.results),
                        [latest] if attach_screenshot else [])
        if done:
            outcome = WorkerOutcome.COMPLETED
            break
        if not rnd.actions:
            idle += 1
            if idle >= MAX_IDLE_REPLIES:
                outcome, error = WorkerOutcome.ERROR, f"{idle} consecutive replies without code"
                break
            conv.append(Role.CODE_INTERPRETER,
                        f"No ```python or ```bash block found. Reply with code, or {COMPLETION_TOKEN} when finished.")

    summary, fallback = _summarize(conv, summarizer)
    if error:
        summary = f"{summary}\n[programmer error: {error}]"
    return WorkerReport(
        worker=Worker.PROGRAMMER,
        summary_or_message=summary,
        final_screenshot=latest,
        env_interactions_used=interactions,
        outcome=outcome,
        summary_fallback=fallback,
        error=error,
        fatal=fatal,
    )
