"""Command-line entry points: run, replay, analyze, serve.

Exit codes for ``run``:

    outcome aborted_error                  -> 2
    evaluator verdict pass / fail          -> 0 / 1
    evaluator verdict indeterminate        -> 2
    no evaluator: success claimed / not    -> 0 / 1
    configuration error (nothing written)  -> 2

``replay`` exits 0 when every StepRecord matches, 3 on the first mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from . import __version__
from .backends import REPLIES_FILE, BackendSet, load_backend_config, record_backends, replay_backends
from .environment import SNAPSHOTS, EnvironmentSession, HttpEnvironment, SimDesktop
from .errors import CuagentError, HarnessError
from .evaluator import Verdict, verdict
from .metrics import DEFAULT_BINS, SUMMARY_FILE, analyze, find_runs, ingest_corpus, report_tables
from .orchestrator import TaskOutcome, TaskStatus, run_task
from .protocol import Budgets, TaskSpec
from .taskfile import load_task, task_from_dict, task_to_dict
from .trace import Trace, first_divergence, load_trace

log = logging.getLogger("cuagent")

EXIT_PASS, EXIT_FAIL, EXIT_ERROR, EXIT_MISMATCH = 0, 1, 2, 3
SUMMARY_SCHEMA = 1


@dataclass(frozen=True)
class EnvTarget:
    kind: str  # "sim" | "http"
    value: str  # fixture name or URL

    @classmethod
    def parse(cls, text: str) -> "EnvTarget":
        if text.startswith(("http://", "https://")):
            return cls("http", text)
        if text == "sim" or text.startswith("sim:"):
            fixture = text[4:]  # empty: use the task's snapshot
            if fixture and fixture not in SNAPSHOTS:
                raise ValueError(f"unknown sim fixture {fixture!r}; choose from {sorted(SNAPSHOTS)}")
            return cls("sim", fixture)
        raise ValueError(f"environment must be sim:<fixture> or an http(s) URL, got {text!r}")

    def __str__(self) -> str:
        return self.value if self.kind == "http" else f"sim:{self.value}".rstrip(":")


def exit_code_for(status: TaskStatus, task_verdict: Verdict | None) -> int:
    if status == TaskStatus.ABORTED_ERROR:
        return EXIT_ERROR
    if task_verdict is None:
        return EXIT_PASS if status == TaskStatus.TERMINATED_SUCCESS_CLAIM else EXIT_FAIL
    return {Verdict.PASS: EXIT_PASS, Verdict.FAIL: EXIT_FAIL, Verdict.INDETERMINATE: EXIT_ERROR}[task_verdict]


def open_env(target: EnvTarget, task: TaskSpec, seed: int) -> EnvironmentSession:
    if target.kind == "sim":
        return SimDesktop(target.value or task.snapshot or "blank", seed)
    env = HttpEnvironment.connect(target.value, new_session=True)
    if task.snapshot:
        env.reset(task.snapshot)
    return env


def build_summary(task: TaskSpec, target: EnvTarget, seed: int, trace: Trace, outcome: TaskOutcome,
                  task_verdict: Verdict | None, eval_log: list) -> dict[str, Any]:
    gui = sum(1 for r in trace if r.kind == "gui")
    return {
        "schema_version": SUMMARY_SCHEMA,
        "task_id": task.id,
        "domain": task.domain,
        "task": task_to_dict(task),
        "env": str(target),
        "seed": seed,
        "outcome": outcome.status.value,
        "final_answer": outcome.final_answer,
        "error": outcome.error,
        "verdict": task_verdict.value if task_verdict else None,
        "counts": {"total": len(trace), "gui": gui, "code": len(trace) - gui},
        "rounds_used": outcome.rounds_used,
        "orchestrator_calls": outcome.model_calls,
        "evaluator_checks": [{"atom": atom.key, "value": value} for atom, value in eval_log],
    }


def execute(task: TaskSpec, target: EnvTarget, backends: BackendSet, trace: Trace,
            seed: int = 0) -> tuple[TaskOutcome, Verdict | None, list]:
    env = open_env(target, task, seed)
    try:
        _, outcome = run_task(task, env, backends, trace)
        task_verdict = None
        eval_log: list = []
        if task.evaluator is not None and outcome.status != TaskStatus.ABORTED_ERROR:
            task_verdict = verdict(task.evaluator, env, eval_log)
    finally:
        env.close()
    return outcome, task_verdict, eval_log


def cmd_run(args: argparse.Namespace) -> int:
    # everything that can fail on configuration is checked before touching the environment
    try:
        task = load_task(args.task)
        overrides = {k: v for k, v in (("programmer_max_rounds", args.max_programmer_rounds),
                                       ("gui_max_steps", args.max_gui_steps),
                                       ("orchestrator_max_rounds", args.max_orchestrator_rounds)) if v is not None}
        if overrides:
            task = replace(task, budgets=Budgets.from_dict({**task.budgets.to_dict(), **overrides}))
        target = EnvTarget.parse(args.env)
        backends = load_backend_config(args.backends)
    except (OSError, ValueError, CuagentError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    trace_dir = Path(args.trace_dir or Path("runs") / task.id)
    trace = Trace(trace_dir)
    sink = None
    if args.record:
        backends, sink = record_backends(backends, trace_dir / REPLIES_FILE)
    try:
        outcome, task_verdict, eval_log = execute(task, target, backends, trace, args.seed)
    except CuagentError as exc:
        outcome, task_verdict, eval_log = TaskOutcome(TaskStatus.ABORTED_ERROR, error=str(exc)), None, []
    finally:
        trace.close()
        if sink is not None:
            sink.close()
    summary = build_summary(task, target, args.seed, trace, outcome, task_verdict, eval_log)
    (trace_dir / SUMMARY_FILE).write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    code = exit_code_for(outcome.status, task_verdict)
    print(f"{task.id}: outcome={outcome.status.value} verdict={summary['verdict']} "
          f"interactions={len(trace)} exit={code}")
    if outcome.error:
        print(f"error: {outcome.error}", file=sys.stderr)
    return code


def replay_run(trace_dir: str | Path) -> tuple[int, str]:
    """Re-execute a recorded sim run with strict replay backends; (exit code, message)."""
    trace_dir = Path(trace_dir)
    try:
        summary = json.loads((trace_dir / SUMMARY_FILE).read_text(encoding="utf-8"))
        task = task_from_dict(summary["task"])
        target = EnvTarget.parse(summary["env"])
        recorded = load_trace(trace_dir)
        backends = replay_backends(trace_dir / REPLIES_FILE, strict=True)
    except (OSError, ValueError, KeyError, CuagentError) as exc:
        return EXIT_ERROR, f"cannot load recorded run: {exc}"
    if target.kind != "sim":
        return EXIT_ERROR, "replay needs a run recorded against the sim environment"

    trace = Trace()
    outcome, _, _ = execute(task, target, backends, trace, int(summary.get("seed", 0)))
    if isinstance(outcome.exception, HarnessError):
        diff = first_divergence(recorded[:len(trace)], trace)
        if diff is not None:
            return EXIT_MISMATCH, f"mismatch at step {diff[0]}: {diff[1]}"
        return EXIT_MISMATCH, (f"{type(outcome.exception).__name__} after {len(trace)} matching steps: "
                               f"{outcome.exception}")
    diff = first_divergence(recorded, trace)
    if diff is not None:
        return EXIT_MISMATCH, f"mismatch at step {diff[0]}: {diff[1]}"
    if outcome.status.value != summary.get("outcome"):
        return EXIT_MISMATCH, f"outcome differs: recorded {summary.get('outcome')}, replayed {outcome.status.value}"
    return EXIT_PASS, f"replayed {len(trace)} steps, all identical"


def cmd_replay(args: argparse.Namespace) -> int:
    code, message = replay_run(args.trace_dir)
    print(message, file=sys.stdout if code == EXIT_PASS else sys.stderr)
    return code


def cmd_analyze(args: argparse.Namespace) -> int:
    runs = find_runs(args.traces)
    if not runs:
        print("no traces found", file=sys.stderr)
        return EXIT_ERROR
    try:
        bins = [int(b) for b in args.bins.split(",")] if args.bins else list(DEFAULT_BINS)
        results = ingest_corpus(runs, jobs=args.jobs)
        report = analyze(results, bins)
    except (ValueError, CuagentError) as exc:
        print(f"analyze failed: {exc}", file=sys.stderr)
        return EXIT_ERROR
    text = json.dumps(report, indent=2)
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text + "\n", encoding="utf-8")
        for name, table in report_tables(report).items():
            (out / name).write_text(table, encoding="utf-8")
    print(text)
    return EXIT_PASS


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import NoDisplay, SimDisplay, XDisplay, serve

    display = {"none": NoDisplay, "sim": SimDisplay, "x11": XDisplay}[args.display]()
    Path(args.workdir).mkdir(parents=True, exist_ok=True)
    serve(args.host, args.port, workdir=args.workdir, display=display,
          max_output_bytes=args.max_output_bytes, fixtures_dir=args.fixtures_dir)
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="cuagent", description="Hybrid GUI/code computer-use agent runtime.",
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one task", formatter_class=fmt)
    p.add_argument("--task", required=True, help="task JSON file")
    p.add_argument("--env", default="sim", help="sim, sim:<fixture> or http(s) URL of an interp-service")
    p.add_argument("--backends", required=True, help="backend config JSON file")
    p.add_argument("--trace-dir", help="output directory (default: runs/<task id>)")
    p.add_argument("--seed", type=int, default=0, help="sim desktop seed")
    p.add_argument("--max-programmer-rounds", type=int, help="override I (default 20)")
    p.add_argument("--max-gui-steps", type=int, help="override K (default 25)")
    p.add_argument("--max-orchestrator-rounds", type=int, help="override J (default 15)")
    p.add_argument("--record", action=argparse.BooleanOptionalAction, default=True,
                   help="record model replies for replay")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="replay a recorded sim run and compare step records", formatter_class=fmt)
    p.add_argument("trace_dir", help="directory written by 'run'")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("analyze", help="step and modality statistics over run directories", formatter_class=fmt)
    p.add_argument("traces", nargs="+", help="run directories or parents of run directories")
    p.add_argument("--bins", help=f"comma-separated bin edges (default {','.join(map(str, DEFAULT_BINS))})")
    p.add_argument("--output", help="directory for report.json and CSV tables")
    p.add_argument("--jobs", type=int, default=1, help="parallel trace ingestion")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="run the interpreter HTTP service", formatter_class=fmt)
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, default=8765, help="listen port")
    p.add_argument("--workdir", default="./interp-workdir", help="script working directory")
    p.add_argument("--fixtures-dir", help="directory of named snapshot trees for /reset")
    p.add_argument("--max-output-bytes", type=int, default=32768, help="cap on captured stdout/stderr per stream")
    p.add_argument("--display", choices=("none", "sim", "x11"), default="none",
                   help="GUI backend; none serves placeholder screenshots and answers /action with 501")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
