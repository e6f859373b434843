import json
import subprocess
import sys
from dataclasses import replace

import pytest

from cuagent.cli import EXIT_ERROR, EXIT_FAIL, EXIT_MISMATCH, EXIT_PASS, EnvTarget, exit_code_for, main, replay_run
from cuagent.evaluator import Verdict, parse_evaluator
from cuagent.orchestrator import TaskStatus
from cuagent.taskfile import save_task
from sim_tasks import build_sim_tasks

TASKS = {t.task.id: t for t in build_sim_tasks()}


def write_inputs(directory, sim_task, task=None):
    """Task file plus a scripted backend config reproducing ``sim_task``'s plan."""
    directory.mkdir(parents=True, exist_ok=True)
    save_task(task or sim_task.task, directory / "task.json")
    bs = sim_task.backends()
    roles = {}
    for slot in ("orchestrator", "programmer", "gui", "summarizer"):
        (directory / f"{slot}.json").write_text(json.dumps(getattr(bs, slot).to_dict()))
        roles[slot] = {"kind": "scripted", "script_path": f"{slot}.json"}
    (directory / "backends.json").write_text(json.dumps({"schema_version": 1, "roles": roles}))
    return directory / "task.json", directory / "backends.json"


def run_cli(tmp_path, task_id, *extra, task=None):
    task_file, config = write_inputs(tmp_path / "inputs", TASKS[task_id], task)
    trace_dir = tmp_path / "run"
    code = main(["run", "--task", str(task_file), "--backends", str(config), "--trace-dir", str(trace_dir), *extra])
    return code, trace_dir


def test_run_pass_writes_trace_summary_and_replies(tmp_path, capsys):
    code, trace_dir = run_cli(tmp_path, "create-file")
    assert code == EXIT_PASS
    summary = json.loads((trace_dir / "summary.json").read_text())
    assert summary["verdict"] == "pass" and summary["counts"] == {"total": 1, "gui": 0, "code": 1}
    assert summary["evaluator_checks"] == [{"atom": "md5", "value": True}]
    assert (trace_dir / "replies.jsonl").is_file()
    assert len((trace_dir / "trace.jsonl").read_text().splitlines()) == 1
    assert "outcome=terminated_success_claim" in capsys.readouterr().out


def test_run_with_sabotaged_evaluator_fails(tmp_path):
    sim_task = TASKS["create-file"]
    bad = {"md5": {"path": "/home/user/a.txt", "digest": "0" * 32}}
    code, trace_dir = run_cli(tmp_path, "create-file", task=replace(sim_task.task, evaluator=parse_evaluator(bad)))
    assert code == EXIT_FAIL
    assert json.loads((trace_dir / "summary.json").read_text())["verdict"] == "fail"


def test_missing_config_is_error_and_writes_nothing(tmp_path):
    task_file, _ = write_inputs(tmp_path / "inputs", TASKS["create-file"])
    trace_dir = tmp_path / "run"
    code = main(["run", "--task", str(task_file), "--backends", str(tmp_path / "absent.json"),
                 "--trace-dir", str(trace_dir)])
    assert code == EXIT_ERROR and not trace_dir.exists()


def test_bad_env_is_error(tmp_path):
    code, trace_dir = run_cli(tmp_path, "create-file", "--env", "sim:nowhere")
    assert code == EXIT_ERROR and not trace_dir.exists()


def test_budget_override_flags(tmp_path):
    code, trace_dir = run_cli(tmp_path, "create-file", "--max-orchestrator-rounds", "1", "--no-record")
    summary = json.loads((trace_dir / "summary.json").read_text())
    assert summary["task"]["budgets"]["orchestrator_max_rounds"] == 1
    assert summary["outcome"] == "budget_exhausted" and summary["verdict"] == "pass"
    assert not (trace_dir / "replies.jsonl").exists()


def test_run_writes_only_inside_trace_dir(tmp_path, monkeypatch):
    task_file, config = write_inputs(tmp_path / "inputs", TASKS["gui-then-code"])
    cwd = tmp_path / "cwd"
    cwd.mkdir()
    monkeypatch.chdir(cwd)
    before = {p for p in tmp_path.rglob("*")}
    assert main(["run", "--task", str(task_file), "--backends", str(config), "--trace-dir", "out"]) == EXIT_PASS
    created = {p for p in tmp_path.rglob("*")} - before
    assert created and all(cwd / "out" in p.parents or p == cwd / "out" for p in created)


def test_default_trace_dir_uses_task_id(tmp_path, monkeypatch):
    task_file, config = write_inputs(tmp_path / "inputs", TASKS["open-files"])
    monkeypatch.chdir(tmp_path)
    assert main(["run", "--task", str(task_file), "--backends", str(config)]) == EXIT_PASS
    assert (tmp_path / "runs" / "open-files" / "summary.json").is_file()


@pytest.mark.parametrize("task_id", ["create-file", "gui-then-code"])
def test_replay_identical(tmp_path, task_id):
    _, trace_dir = run_cli(tmp_path, task_id)
    code, message = replay_run(trace_dir)
    assert code == EXIT_PASS, message


def test_replay_detects_edited_reply(tmp_path):
    _, trace_dir = run_cli(tmp_path, "copy-note")
    path = trace_dir / "replies.jsonl"
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    for rec in lines:
        if rec["slot"] == "programmer":
            rec["reply"] = rec["reply"].replace("buy milk", "buy bread")
    path.write_text("".join(json.dumps(r) + "\n" for r in lines))
    code, message = replay_run(trace_dir)
    assert code == EXIT_MISMATCH and "step 2" in message


def test_replay_detects_truncated_replies(tmp_path):
    _, trace_dir = run_cli(tmp_path, "gui-then-code")
    path = trace_dir / "replies.jsonl"
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:3]) + "\n")
    code, message = replay_run(trace_dir)
    assert code == EXIT_MISMATCH and "Replay" in message


def test_replay_of_unrecorded_run_is_error(tmp_path):
    _, trace_dir = run_cli(tmp_path, "create-file", "--no-record")
    assert replay_run(trace_dir)[0] == EXIT_ERROR
    assert main(["replay", str(tmp_path / "missing")]) == EXIT_ERROR


def test_analyze_runs(tmp_path, capsys):
    for task_id in ("create-file", "open-files", "gui-then-code"):
        sub = tmp_path / task_id
        sub.mkdir()
        run_cli(sub, task_id)
    capsys.readouterr()
    out = tmp_path / "report"
    assert main(["analyze", str(tmp_path), "--output", str(out), "--bins", "0,2,10"]) == EXIT_PASS
    report = json.loads(capsys.readouterr().out)
    assert report["tasks"] == 3 and report["successes"] == 3
    assert report["average_steps_successful"] == pytest.approx((1 + 1 + 6) / 3)
    assert (out / "report.json").is_file() and (out / "modality_by_bin.csv").is_file()


def test_analyze_without_traces_is_error(tmp_path):
    assert main(["analyze", str(tmp_path)]) == EXIT_ERROR
    sub = tmp_path / "one"
    sub.mkdir()
    run_cli(sub, "create-file")
    assert main(["analyze", str(tmp_path), "--bins", "5,1"]) == EXIT_ERROR


def test_env_target_parsing():
    assert str(EnvTarget.parse("sim")) == "sim"
    assert EnvTarget.parse("sim:desktop") == EnvTarget("sim", "desktop")
    assert EnvTarget.parse("http://host:8765").kind == "http"
    for bad in ("ftp://x", "sim:bogus", "local"):
        with pytest.raises(ValueError):
            EnvTarget.parse(bad)


def test_exit_code_table():
    assert exit_code_for(TaskStatus.ABORTED_ERROR, None) == EXIT_ERROR
    assert exit_code_for(TaskStatus.TERMINATED_SUCCESS_CLAIM, None) == EXIT_PASS
    assert exit_code_for(TaskStatus.BUDGET_EXHAUSTED, None) == EXIT_FAIL
    assert exit_code_for(TaskStatus.TERMINATED_FAILURE_CLAIM, Verdict.PASS) == EXIT_PASS
    assert exit_code_for(TaskStatus.TERMINATED_SUCCESS_CLAIM, Verdict.FAIL) == EXIT_FAIL
    assert exit_code_for(TaskStatus.BUDGET_EXHAUSTED, Verdict.INDETERMINATE) == EXIT_ERROR


def test_help_lists_every_command_with_defaults():
    out = subprocess.run([sys.executable, "-m", "cuagent", "--help"], capture_output=True, text=True, check=True).stdout
    for cmd in ("run", "replay", "analyze", "serve"):
        assert cmd in out
    out = subprocess.run([sys.executable, "-m", "cuagent", "serve", "--help"], capture_output=True, text=True,
                         check=True).stdout
    assert "8765" in out and "default" in out

