"""Top-level planning loop.

Each round the orchestrator model replies with one JSON decision:

    {"action": "assign", "worker": "programmer" | "gui_operator", "instruction": "...",
     "env_context": {"key": "value"}, "required_info": "..."}
    {"action": "terminate", "answer": "...", "success": true | false}

An assignment runs one worker subtask to completion and its report (text plus
screenshot) is appended to the orchestrator's conversation, which persists for the
whole task. Worker conversations are created fresh for every subtask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Union

from .backends import BackendSet, ModelBackend
from .environment.base import DEFAULT_SCRIPT_TIMEOUT, EnvironmentSession
from .errors import BackendError, EnvironmentUnreachable, HarnessError, ProtocolError, UndecodableDecision
from .gui_operator import run_gui_subtask
from .programmer import render_context, run_programmer_subtask
from .protocol import (
    Conversation,
    Role,
    Screenshot,
    SubtaskAssignment,
    TaskSpec,
    Worker,
    WorkerReport,
    iter_json_objects,
)
from .trace import Trace

log = logging.getLogger(__name__)

SYSTEM_PROMPT = """\
You are the orchestrator of a computer-use team. You cannot touch the computer
yourself. Each turn, either delegate one subtask or finish, replying with exactly one
JSON object:
  {"action": "assign", "worker": "programmer", "instruction": "...", "env_context": {...}}
  {"action": "assign", "worker": "gui_operator", "instruction": "...", "env_context": {...},
   "required_info": "what the GUI operator must report back"}
  {"action": "terminate", "answer": "...", "success": true}
The programmer writes Python/Bash scripts and cannot see well: give it the open
windows, file paths and any other context it needs in env_context. The GUI operator
clicks and types on screen. After each subtask you receive its report and a screenshot.
"""

_WORKER_NAMES = {"programmer": Worker.PROGRAMMER, "gui_operator": Worker.GUI_OPERATOR, "gui": Worker.GUI_OPERATOR}


class TaskStatus(str, Enum):
    TERMINATED_SUCCESS_CLAIM = "terminated_success_claim"
    TERMINATED_FAILURE_CLAIM = "terminated_failure_claim"
    BUDGET_EXHAUSTED = "budget_exhausted"
    ABORTED_ERROR = "aborted_error"


@dataclass(frozen=True)
class AssignDecision:
    assignment: SubtaskAssignment


@dataclass(frozen=True)
class TerminateDecision:
    final_answer: str
    success_claim: bool


OrchestratorDecision = Union[AssignDecision, TerminateDecision]


@dataclass
class OrchestratorState:
    conversation: Conversation
    trace: Trace
    rounds_used: int = 0
    model_calls: int = 0
    latest_screenshot: Screenshot | None = None
    reports: list[WorkerReport] = field(default_factory=list)
    worker_conversations: list[Conversation] = field(default_factory=list)


@dataclass
class TaskOutcome:
    status: TaskStatus
    final_answer: str | None = None
    rounds_used: int = 0
    model_calls: int = 0
    env_interactions: int = 0
    error: str | None = None
    exception: BaseException | None = field(default=None, repr=False, compare=False)
    reports: list[WorkerReport] = field(default_factory=list, repr=False)


def parse_decision(text: str) -> OrchestratorDecision:
    for obj in iter_json_objects(text):
        if "action" in obj:
            return decision_from_dict(obj)
    raise UndecodableDecision("no decision object with an 'action' field")


def decision_from_dict(obj: dict[str, Any]) -> OrchestratorDecision:
    action = obj.get("action")
    if action == "terminate":
        answer = obj.get("answer", "")
        success = obj.get("success", True)
        if not isinstance(answer, str) or not isinstance(success, bool):
            raise UndecodableDecision("terminate needs a string answer and a boolean success")
        return TerminateDecision(answer, success)
    if action != "assign":
        raise UndecodableDecision(f"unknown action {action!r}")
    worker = _WORKER_NAMES.get(obj.get("worker"))  # type: ignore[arg-type]
    if worker is None:
        raise UndecodableDecision(f"unknown worker {obj.get('worker')!r}")
    instruction = obj.get("instruction")
    if not isinstance(instruction, str) or not instruction.strip():
        raise UndecodableDecision("assign needs a non-empty instruction")
    ctx = obj.get("env_context") or {}
    if not isinstance(ctx, dict):
        raise UndecodableDecision("env_context must be an object")
    required = obj.get("required_info")
    if required is not None and not isinstance(required, str):
        raise UndecodableDecision("required_info must be a string")
    return AssignDecision(SubtaskAssignment(worker, instruction, {str(k): str(v) for k, v in ctx.items()}, required))


def initial_state(task: TaskSpec, screenshot: Screenshot, trace: Trace) -> OrchestratorState:
    conv = Conversation(Role.ORCHESTRATOR)
    conv.append(Role.SYSTEM, SYSTEM_PROMPT)
    text = f"Task: {task.instruction}"
    if ctx := render_context(task.env_context):
        text += "\n" + ctx
    conv.append(Role.SYSTEM, text, [screenshot])
    return OrchestratorState(conv, trace, latest_screenshot=screenshot)


def decide_next(state: OrchestratorState, model: ModelBackend, budget: int | None = None) -> OrchestratorDecision:
    """Ask the orchestrator model for a decision, with one corrective reprompt."""
    if budget is not None and state.rounds_used >= budget:
        raise ValueError("orchestrator round budget already spent")
    last_error: ProtocolError | None = None
    for attempt in range(2):
        reply = model.chat(state.conversation)
        state.model_calls += 1
        state.conversation.append(Role.ORCHESTRATOR, reply)
        try:
            return parse_decision(reply)
        except (ProtocolError, ValueError) as exc:
            last_error = exc if isinstance(exc, ProtocolError) else UndecodableDecision(str(exc))
            if attempt == 0:
                state.conversation.append(
                    Role.SYSTEM, f"Your reply could not be decoded ({last_error}). Reply with exactly one JSON decision object."
                )
    raise UndecodableDecision(f"two undecodable replies in a row: {last_error}")


def incorporate_report(state: OrchestratorState, report: WorkerReport) -> OrchestratorState:
    role = Role.SUMMARIZER if report.worker == Worker.PROGRAMMER else Role.GUI_AGENT
    header = (f"[{report.worker.value} report] outcome={report.outcome.value} "
              f"environment_interactions={report.env_interactions_used}")
    state.conversation.append(role, f"{header}\n{report.summary_or_message}", [report.final_screenshot])
    state.latest_screenshot = report.final_screenshot
    state.reports.append(report)
    state.rounds_used += 1
    return state


def run_task(
    task: TaskSpec,
    env: EnvironmentSession,
    backends: BackendSet,
    trace: Trace | None = None,
    *,
    script_timeout: float = DEFAULT_SCRIPT_TIMEOUT,
    attach_programmer_screenshots: bool = True,
) -> tuple[Trace, TaskOutcome]:
    trace = trace if trace is not None else Trace()
    budgets = task.budgets

    def finish(status: TaskStatus, state: OrchestratorState | None, answer: str | None = None,
               error: str | None = None, exc: BaseException | None = None) -> tuple[Trace, TaskOutcome]:
        return trace, TaskOutcome(
            status=status,
            final_answer=answer,
            rounds_used=state.rounds_used if state else 0,
            model_calls=state.model_calls if state else 0,
            env_interactions=len(trace),
            error=error,
            exception=exc,
            reports=list(state.reports) if state else [],
        )

    try:
        first = env.capture_screenshot().screenshot
    except EnvironmentUnreachable as exc:
        return finish(TaskStatus.ABORTED_ERROR, None, error=f"environment unreachable: {exc}", exc=exc)
    state = initial_state(task, first, trace)

    while state.rounds_used < budgets.orchestrator_max_rounds:
        try:
            decision = decide_next(state, backends.orchestrator)
        except UndecodableDecision as exc:
            return finish(TaskStatus.ABORTED_ERROR, state, error=str(exc), exc=exc)
        except BackendError as exc:
            return finish(TaskStatus.ABORTED_ERROR, state, error=f"orchestrator backend failed: {exc}", exc=exc)

        if isinstance(decision, TerminateDecision):
            status = TaskStatus.TERMINATED_SUCCESS_CLAIM if decision.success_claim else TaskStatus.TERMINATED_FAILURE_CLAIM
            return finish(status, state, answer=decision.final_answer)

        assignment = decision.assignment
        subtask_index = state.rounds_used + 1
        owner = Role.CODING_AGENT if assignment.worker == Worker.PROGRAMMER else Role.GUI_AGENT
        worker_conv = Conversation(owner)
        state.worker_conversations.append(worker_conv)
        log.info("round %d: %s <- %s", subtask_index, assignment.worker.value, assignment.instruction)
        try:
            if assignment.worker == Worker.PROGRAMMER:
                report = run_programmer_subtask(
                    assignment, env, backends.programmer, backends.summarizer,
                    budgets.programmer_max_rounds, screenshot=state.latest_screenshot, trace=trace,
                    subtask_index=subtask_index, timeout=script_timeout,
                    attach_screenshot=attach_programmer_screenshots, conversation=worker_conv,
                )
            else:
                report = run_gui_subtask(
                    assignment, env, backends.gui, budgets.gui_max_steps,
                    screenshot=state.latest_screenshot, trace=trace,
                    subtask_index=subtask_index, conversation=worker_conv,
                )
        except HarnessError as exc:
            return finish(TaskStatus.ABORTED_ERROR, state, error=str(exc), exc=exc)

        incorporate_report(state, report)
        if report.fatal:
            return finish(TaskStatus.ABORTED_ERROR, state, error=report.error)

    return finish(TaskStatus.BUDGET_EXHAUSTED, state)
