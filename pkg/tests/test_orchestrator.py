import random

import pytest
from hypothesis import given, settings, strategies as st

from cuagent.backends import BackendSet, ScriptedBackend
from cuagent.environment import SimDesktop
from cuagent.errors import ReplayMismatch, TransportError, UndecodableDecision
from cuagent.orchestrator import (
    AssignDecision,
    TaskStatus,
    TerminateDecision,
    decide_next,
    initial_state,
    parse_decision,
    run_task,
)
from cuagent.protocol import Budgets, Role, TaskSpec, Worker, interaction_bound
from cuagent.trace import Trace
from helpers import act, adversarial_backends, assign, backends, bash, never_stopping_backends, terminate


def task(instruction="do the thing", budgets=None, **ctx):
    return TaskSpec("t1", instruction, ctx, budgets or Budgets(), evaluator=None)


def test_immediate_terminate():
    bs = backends([terminate("nothing needed")])
    trace, outcome = run_task(task(), SimDesktop(), bs)
    assert outcome.status == TaskStatus.TERMINATED_SUCCESS_CLAIM
    assert outcome.final_answer == "nothing needed"
    assert len(trace) == 0 and outcome.rounds_used == 0 and outcome.model_calls == 1


def test_failure_claim():
    _, outcome = run_task(task(), SimDesktop(), backends([terminate("cannot", False)]))
    assert outcome.status == TaskStatus.TERMINATED_FAILURE_CLAIM


def test_create_file_in_one_interaction():
    env = SimDesktop("blank")
    bs = backends([assign("programmer", "write 42 to /tmp/x"), terminate("done")], [bash("echo -n 42 > /tmp/x")])
    trace, outcome = run_task(task(), env, bs)
    assert outcome.status == TaskStatus.TERMINATED_SUCCESS_CLAIM
    assert outcome.env_interactions == 1 == len(trace)
    assert env.read_file("/tmp/x") == b"42"


def test_worst_case_is_exactly_the_bound():
    trace, outcome = run_task(task(), SimDesktop("desktop"), never_stopping_backends())
    assert outcome.status == TaskStatus.BUDGET_EXHAUSTED
    assert len(trace) == 15 * 25 == interaction_bound(Budgets()) == 375
    assert outcome.rounds_used == 15 and outcome.model_calls == 15


def test_small_budgets_respected():
    b = Budgets(programmer_max_rounds=2, gui_max_steps=3, orchestrator_max_rounds=4)
    bs = never_stopping_backends()
    bs.orchestrator = ScriptedBackend.sequence([], then=assign("programmer", "loop"))
    trace, outcome = run_task(task(budgets=b), SimDesktop(), bs)
    assert len(trace) == 8 and {r.subtask_index for r in trace.records} == {1, 2, 3, 4}


def test_two_garbage_replies_abort():
    bs = backends(["hello", "still not json"])
    trace, outcome = run_task(task(), SimDesktop(), bs)
    assert outcome.status == TaskStatus.ABORTED_ERROR
    assert isinstance(outcome.exception, UndecodableDecision)
    assert outcome.model_calls == 2 and len(trace) == 0


def test_one_garbage_reply_is_corrected():
    bs = backends(["oops", terminate("ok")])
    _, outcome = run_task(task(), SimDesktop(), bs)
    assert outcome.status == TaskStatus.TERMINATED_SUCCESS_CLAIM
    corrective = bs.orchestrator.requests[1][-1]
    assert "could not be decoded" in corrective[1]


def test_budget_exhausted_report_then_reassignment():
    b = Budgets(programmer_max_rounds=2, gui_max_steps=2, orchestrator_max_rounds=5)
    bs = backends([assign("gui", "click"), assign("programmer", "fix it"), terminate("ok")],
                  [bash("echo -n ok > /done")], [act("click", x=5, y=5)] * 5)
    env = SimDesktop("desktop")
    trace, outcome = run_task(task(budgets=b), env, bs)
    assert outcome.status == TaskStatus.TERMINATED_SUCCESS_CLAIM
    assert [r.outcome.value for r in outcome.reports] == ["budget_exhausted", "completed"]
    assert len(trace) == 3 and env.read_file("/done") == b"ok"
    report_text = bs.orchestrator.requests[1][-1][1]
    assert "outcome=budget_exhausted" in report_text


def test_model_calls_at_most_twice_decisions():
    _, outcome = run_task(task(), SimDesktop(), adversarial_backends(random.Random(3)))
    assert outcome.model_calls <= 2 * (outcome.rounds_used + 1)
    assert outcome.rounds_used <= 15


def test_orchestrator_memory_only_grows_and_workers_start_fresh():
    bs = backends([assign("programmer", "a"), assign("gui", "b"), assign("programmer", "c"), terminate()],
                  [bash("echo first"), bash("echo second")], [act("terminate", message="gui done")])
    run_task(task(), SimDesktop(), bs)
    requests = bs.orchestrator.requests
    for earlier, later in zip(requests, requests[1:]):
        assert later[:len(earlier)] == earlier
    # every worker conversation starts with the system prompt and the subtask only
    second_programmer_seed = bs.programmer.requests[1]
    assert len(second_programmer_seed) == 2 and "Subtask: c" in second_programmer_seed[1][1]


def test_reports_are_attributed():
    bs = backends([assign("programmer", "a"), assign("gui", "b"), terminate()],
                  [bash("echo hi")], [act("terminate", message="verbatim gui message")], summary="prog summary")
    _, outcome = run_task(task(), SimDesktop(), bs)
    final = bs.orchestrator.requests[-1]
    roles = [r for r, _ in final]
    assert Role.SUMMARIZER.value in roles and Role.GUI_AGENT.value in roles
    texts = [t for _, t in final]
    assert any(t.endswith("\nprog summary") for t in texts)
    assert any(t.endswith("\nverbatim gui message") for t in texts)


def test_fatal_environment_failure_aborts():
    class Dying(SimDesktop):
        def execute_script(self, action, timeout=120):
            raise TransportError("gone")

    bs = backends([assign("programmer", "a"), terminate()], [bash("echo x")])
    _, outcome = run_task(task(), Dying(), bs)
    assert outcome.status == TaskStatus.ABORTED_ERROR and "unreachable" in outcome.error


def test_initial_screenshot_failure_aborts():
    class Dead(SimDesktop):
        def capture_screenshot(self):
            raise TransportError("no")

    _, outcome = run_task(task(), Dead(), backends([terminate()]))
    assert outcome.status == TaskStatus.ABORTED_ERROR and outcome.model_calls == 0


def test_harness_errors_abort():
    class Strict:
        def chat(self, conversation, role_config=None):
            raise ReplayMismatch("diverged")

    bs = backends([assign("programmer", "a")])
    bs.programmer = Strict()
    _, outcome = run_task(task(), SimDesktop(), bs)
    assert outcome.status == TaskStatus.ABORTED_ERROR and isinstance(outcome.exception, ReplayMismatch)


def test_parse_decision_variants():
    d = parse_decision('thinking... {"action": "assign", "worker": "gui_operator", "instruction": "x", '
                       '"env_context": {"n": 3}, "required_info": "title"}')
    assert isinstance(d, AssignDecision) and d.assignment.worker == Worker.GUI_OPERATOR
    assert d.assignment.env_context == {"n": "3"} and d.assignment.required_info == "title"
    assert parse_decision('{"note": 1} {"action": "terminate"}') == TerminateDecision("", True)
    for bad in ['{"action": "assign", "worker": "robot", "instruction": "x"}',
                '{"action": "assign", "worker": "gui", "instruction": " "}',
                '{"action": "terminate", "success": "yes"}', '{"action": "dance"}', "[]"]:
        with pytest.raises(UndecodableDecision):
            parse_decision(bad)


def test_decide_next_refuses_after_budget():
    state = initial_state(task(), SimDesktop().capture_screenshot().screenshot, Trace())
    state.rounds_used = 15
    with pytest.raises(ValueError):
        decide_next(state, ScriptedBackend.sequence([terminate()]), budget=15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_budget_safety_under_adversarial_models(seed, i, k, j):
    b = Budgets(programmer_max_rounds=i, gui_max_steps=k, orchestrator_max_rounds=j)
    bs = adversarial_backends(random.Random(seed))
    trace, outcome = run_task(task(budgets=b), SimDesktop("desktop"), bs)
    assert len(trace) <= interaction_bound(b)
    assert outcome.rounds_used <= j
    assert trace.records == sorted(trace.records, key=lambda r: r.seq)
    for index in {r.subtask_index for r in trace.records}:
        per = [r for r in trace.records if r.subtask_index == index]
        assert len(per) <= max(i, k)
