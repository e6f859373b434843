"""Trace-corpus analytics: step counts and the GUI/code modality split.

Bins are half-open ``[edges[i], edges[i+1])`` intervals over a task's total
environment interactions. Per-bin modality fractions pool interactions across the
bin's tasks. Results with an indeterminate evaluation are excluded from error rates.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import BadBins, EmptySelection, TraceIngestError
from .trace import TRACE_FILE, StepRecord, load_trace

SUMMARY_FILE = "summary.json"
DEFAULT_BINS = (0, 5, 10, 20, 40, 80, 160, 376)


@dataclass(frozen=True)
class TaskResult:
    task_id: str
    domain: str
    success: bool | None  # None = indeterminate
    total_env_interactions: int
    gui_interactions: int
    code_interactions: int

    def __post_init__(self):
        if self.gui_interactions + self.code_interactions != self.total_env_interactions:
            raise ValueError(f"{self.task_id}: gui + code != total")
        if min(self.gui_interactions, self.code_interactions) < 0:
            raise ValueError(f"{self.task_id}: negative count")


def count_modalities(records: Iterable[StepRecord]) -> tuple[int, int, int]:
    """(total, gui, code) counted from StepRecords."""
    gui = code = 0
    for rec in records:
        kind = rec.action.get("kind")
        if kind == "gui":
            gui += 1
        elif kind == "code":
            code += 1
        else:
            raise TraceIngestError(f"record {rec.seq}: unknown action kind {kind!r}")
    return gui + code, gui, code


def success_from_summary(summary: dict[str, Any]) -> bool | None:
    """Evaluator verdict wins; runs without an evaluator fall back to the success claim."""
    verdict = summary.get("verdict")
    if verdict == "pass":
        return True
    if verdict == "fail":
        return False
    if verdict == "indeterminate":
        return None
    return summary.get("outcome") == "terminated_success_claim"


def ingest_run(run_dir: str | Path) -> TaskResult:
    run_dir = Path(run_dir)
    try:
        records = load_trace(run_dir / TRACE_FILE)
        summary = json.loads((run_dir / SUMMARY_FILE).read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        raise TraceIngestError(f"{run_dir}: {exc}") from exc
    if [r.seq for r in records] != list(range(1, len(records) + 1)):
        raise TraceIngestError(f"{run_dir}: step sequence numbers are not 1..N")
    total, gui, code = count_modalities(records)
    cached = summary.get("counts", {})
    if cached and (cached.get("total"), cached.get("gui"), cached.get("code")) != (total, gui, code):
        raise TraceIngestError(
            f"{run_dir}: summary counts {cached} disagree with trace (total={total}, gui={gui}, code={code})")
    return TaskResult(
        task_id=str(summary.get("task_id", run_dir.name)),
        domain=str(summary.get("domain", "unknown")),
        success=success_from_summary(summary),
        total_env_interactions=total,
        gui_interactions=gui,
        code_interactions=code,
    )


def find_runs(paths: Iterable[str | Path]) -> list[Path]:
    """Run directories (those containing a trace file) under ``paths``, sorted."""
    runs = set()
    for p in map(Path, paths):
        if p.is_file() and p.name == TRACE_FILE:
            runs.add(p.parent)
        elif (p / TRACE_FILE).is_file():
            runs.add(p)
        elif p.is_dir():
            runs.update(t.parent for t in p.rglob(TRACE_FILE))
    return sorted(runs)


def ingest_corpus(run_dirs: Sequence[str | Path], jobs: int = 1) -> list[TaskResult]:
    if jobs <= 1:
        return [ingest_run(d) for d in run_dirs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(ingest_run, run_dirs))  # map keeps input order


def check_bins(edges: Sequence[int]) -> list[int]:
    edges = list(edges)
    if len(edges) < 2:
        raise BadBins("need at least two bin edges")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise BadBins(f"bin edges must be strictly increasing: {edges}")
    return edges


def _bin_index(edges: list[int], value: int) -> int | None:
    for i in range(len(edges) - 1):
        if edges[i] <= value < edges[i + 1]:
            return i
    return None


def average_steps(results: Iterable[TaskResult], successful_only: bool = True) -> float:
    picked = [r.total_env_interactions for r in results if r.success or not successful_only]
    if not picked:
        raise EmptySelection("no qualifying results")
    return float(Fraction(sum(picked), len(picked)))


def modality_ratio_by_bin(results: Iterable[TaskResult], bin_edges: Sequence[int] = DEFAULT_BINS,
                          include_failed: bool = True) -> list[dict[str, Any]]:
    edges = check_bins(bin_edges)
    gui = [0] * (len(edges) - 1)
    total = [0] * (len(edges) - 1)
    tasks = [0] * (len(edges) - 1)
    for r in results:
        if not include_failed and not r.success:
            continue
        i = _bin_index(edges, r.total_env_interactions)
        if i is None:
            continue
        tasks[i] += 1
        gui[i] += r.gui_interactions
        total[i] += r.total_env_interactions
    rows = []
    for i in range(len(edges) - 1):
        empty = total[i] == 0
        rows.append({
            "lo": edges[i], "hi": edges[i + 1], "tasks": tasks[i], "empty": empty,
            "gui_fraction": None if empty else float(Fraction(gui[i], total[i])),
            "code_fraction": None if empty else float(Fraction(total[i] - gui[i], total[i])),
        })
    return rows


def coding_ratio_by_domain(results: Iterable[TaskResult]) -> dict[str, float]:
    code: dict[str, int] = {}
    total: dict[str, int] = {}
    for r in results:
        code[r.domain] = code.get(r.domain, 0) + r.code_interactions
        total[r.domain] = total.get(r.domain, 0) + r.total_env_interactions
    return {d: float(Fraction(code[d], total[d])) for d in sorted(total) if total[d]}


def error_rate_by_bin(results: Iterable[TaskResult], bin_edges: Sequence[int] = DEFAULT_BINS) -> list[dict[str, Any]]:
    edges = check_bins(bin_edges)
    fails = [0] * (len(edges) - 1)
    tasks = [0] * (len(edges) - 1)
    for r in results:
        if r.success is None:
            continue
        i = _bin_index(edges, r.total_env_interactions)
        if i is None:
            continue
        tasks[i] += 1
        fails[i] += not r.success
    return [{
        "lo": edges[i], "hi": edges[i + 1], "tasks": tasks[i], "empty": tasks[i] == 0,
        "error_rate": None if tasks[i] == 0 else float(Fraction(fails[i], tasks[i])),
    } for i in range(len(edges) - 1)]


def _csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def analyze(results: Sequence[TaskResult], bin_edges: Sequence[int] = DEFAULT_BINS) -> dict[str, Any]:
    """Structured report with the four tables plus the average-steps summary."""
    results = list(results)
    edges = check_bins(bin_edges)
    try:
        avg: float | None = average_steps(results)
    except EmptySelection:
        avg = None
    return {
        "tasks": len(results),
        "successes": sum(1 for r in results if r.success),
        "indeterminate": sum(1 for r in results if r.success is None),
        "average_steps_successful": avg,
        "bins": edges,
        "modality_by_bin": modality_ratio_by_bin(results, edges),
        "coding_ratio_by_domain": coding_ratio_by_domain(results),
        "error_rate_by_bin": error_rate_by_bin(results, edges),
    }


def report_tables(report: dict[str, Any]) -> dict[str, str]:
    """CSV text per table, keyed by file name."""
    return {
        "average_steps.csv": _csv([{"tasks": report["tasks"], "successes": report["successes"],
                                    "average_steps_successful": report["average_steps_successful"]}]),
        "modality_by_bin.csv": _csv(report["modality_by_bin"]),
        "coding_ratio_by_domain.csv": _csv([{"domain": d, "code_fraction": v}
                                            for d, v in report["coding_ratio_by_domain"].items()]),
        "error_rate_by_bin.csv": _csv(report["error_rate_by_bin"]),
    }


def results_to_jsonl(results: Iterable[TaskResult]) -> str:
    return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in results)
