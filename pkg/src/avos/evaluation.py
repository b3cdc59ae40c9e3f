"""Episode metrics: success rate, mean steps, path efficiency, final error.

Success requires an explicit stop with a confirmed identification inside
the 20 m radius.  Path efficiency follows the standard success-weighted
normalization sum(fs * optimal / max(actual, optimal)) / q, which keeps the
score bounded by the success rate.  Optimal length is the straight-line
start-to-target distance (both endpoints lie in the convex scene volume).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

from .agent import TERMINATION_STOPPED, EpisodeRecord
from .world import Task

SUCCESS_THRESHOLD_M = 20.0

DIFFICULTIES = ("Easy", "Medium", "Hard")
METRIC_COLUMNS = ("SR", "MSS", "SPL", "NE")


class EvaluationError(ValueError):
    """Raised for empty suites or record/task mismatches."""


def success(record: EpisodeRecord, task: Task, threshold: float = SUCCESS_THRESHOLD_M) -> int:
    """1 iff the agent stopped, confirmed the target, and ended within range."""
    if record.termination != TERMINATION_STOPPED or not record.found_target:
        return 0
    distance = math.dist(record.final_pose.position, task.target_position)
    return 1 if distance <= threshold else 0


def optimal_path_length(task: Task) -> float:
    return math.dist(task.start_pose.position, task.target_position)


@dataclass(frozen=True)
class MetricRow:
    sr: float  # percent
    mss: float
    spl: float  # percent
    ne: float  # meters
    n_theta: float  # mean exploration-advice injections per episode
    q: int

    def to_dict(self) -> dict:
        return {
            "SR": self.sr,
            "MSS": self.mss,
            "SPL": self.spl,
            "NE": self.ne,
            "N_theta": self.n_theta,
            "q": self.q,
        }


@dataclass(frozen=True)
class SuiteResult:
    rows: dict[str, MetricRow]  # per difficulty plus "Total"

    @property
    def total(self) -> MetricRow:
        return self.rows["Total"]

    def to_dict(self) -> dict:
        return {name: row.to_dict() for name, row in self.rows.items()}


def _aggregate(pairs: list[tuple[EpisodeRecord, Task]], threshold: float) -> MetricRow:
    q = len(pairs)
    fs = [success(r, t, threshold) for r, t in pairs]
    ss = [r.num_steps for r, _ in pairs]
    ne = [math.dist(r.final_pose.position, t.target_position) for r, t in pairs]
    spl_terms = []
    for (record, task), ok in zip(pairs, fs):
        optimal = optimal_path_length(task)
        if optimal <= 0:
            raise EvaluationError(f"task {task.id} has zero optimal path length")
        spl_terms.append(ok * optimal / max(record.path_length, optimal))
    n_theta = [r.exploration_advice_count for r, _ in pairs]
    return MetricRow(
        sr=100.0 * sum(fs) / q,
        mss=sum(ss) / q,
        spl=100.0 * sum(spl_terms) / q,
        ne=sum(ne) / q,
        n_theta=sum(n_theta) / q,
        q=q,
    )


def metrics(
    records: list[EpisodeRecord],
    tasks: list[Task],
    threshold: float = SUCCESS_THRESHOLD_M,
) -> SuiteResult:
    """Aggregate one method's records against their tasks.

    Records pair with tasks by id; every record must have a task.  Rows are
    emitted per difficulty present plus the overall total.
    """
    if not records:
        raise EvaluationError("no episodes")
    by_id = {t.id: t for t in tasks}
    pairs: list[tuple[EpisodeRecord, Task]] = []
    for record in records:
        task = by_id.get(record.task_id)
        if task is None:
            raise EvaluationError(f"record references unknown task {record.task_id!r}")
        pairs.append((record, task))

    rows: dict[str, MetricRow] = {}
    for difficulty in DIFFICULTIES:
        subset = [p for p in pairs if p[1].difficulty == difficulty]
        if subset:
            rows[difficulty] = _aggregate(subset, threshold)
    rows["Total"] = _aggregate(pairs, threshold)
    return SuiteResult(rows)


def report(result: SuiteResult, fmt: str = "table-text") -> str:
    """Render a suite result; csv and json round-trip losslessly."""
    if fmt == "json":
        return json.dumps(result.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["split", *METRIC_COLUMNS, "N_theta", "q"])
        for name, row in result.rows.items():
            writer.writerow(
                [name, repr(row.sr), repr(row.mss), repr(row.spl), repr(row.ne),
                 repr(row.n_theta), row.q]
            )
        return buf.getvalue()
    if fmt == "table-text":
        lines = [
            f"{'split':<8} {'SR↑':>8} {'MSS↓':>8} {'SPL↑':>8} {'NE↓':>9} {'q':>4}"
        ]
        for name, row in result.rows.items():
            lines.append(
                f"{name:<8} {row.sr:>8.2f} {row.mss:>8.2f} {row.spl:>8.2f} "
                f"{row.ne:>9.2f} {row.q:>4d}"
            )
        return "\n".join(lines) + "\n"
    raise EvaluationError(f"unknown report format {fmt!r}")


def parse_csv_report(text: str) -> dict:
    """Inverse of the csv format, for round-trip checks."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    out: dict[str, dict] = {}
    for row in reader:
        name = row[0]
        out[name] = {
            "SR": float(row[1]),
            "MSS": float(row[2]),
            "SPL": float(row[3]),
            "NE": float(row[4]),
            "N_theta": float(row[5]),
            "q": int(row[6]),
        }
    if header[:5] != ["split", "SR", "MSS", "SPL", "NE"]:
        raise EvaluationError("unexpected csv header")
    return out
