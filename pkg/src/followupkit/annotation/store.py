"""Durable batch and response storage for the annotation service.

Batches are JSON documents written once at creation. Accepted responses go
to an append-only JSONL log; a snapshot of applied-line count is written
every few submissions. Startup replays the log deterministically, so a
crashed server loses nothing.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from . import (
    TEMPLATES,
    AnnotationError,
    AnnotationResponse,
    AnnotationTask,
    SubmissionError,
    agreement_report,
    aspect_summary,
)

_SNAPSHOT_EVERY = 25


class UnknownBatchError(AnnotationError):
    pass


class UnknownTaskError(AnnotationError):
    pass


class DuplicateSubmissionError(AnnotationError):
    pass


class TaskCompleteError(AnnotationError):
    pass


class AnnotationStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.batches_dir = self.root / "batches"
        self.batches_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.root / "responses.log"
        self.snapshot_path = self.root / "state.json"
        self._lock = threading.RLock()

        self._batches: dict[str, dict] = {}  # batch_id -> {"template_id", "tasks": [AnnotationTask]}
        self._batch_order: list[str] = []
        self._tasks: dict[str, AnnotationTask] = {}
        self._task_batch: dict[str, str] = {}
        self._responses: dict[tuple[str, str], AnnotationResponse] = {}
        self._applied = 0
        self._load()

    # -- persistence --------------------------------------------------------

    def _load(self) -> None:
        for path in sorted(self.batches_dir.glob("*.json")):
            with path.open("r", encoding="utf-8") as fh:
                doc = json.load(fh)
            self._index_batch(doc)
        if self.log_path.exists():
            with self.log_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line)
                    except json.JSONDecodeError:
                        break  # truncated tail from a crash; everything before it holds
                    response = AnnotationResponse(
                        task_id=obj["task_id"],
                        annotator_id=obj["annotator_id"],
                        answers={k: int(v) for k, v in obj["answers"].items()},
                        elapsed_seconds=obj.get("elapsed_seconds", 0.0),
                    )
                    self._responses[(response.task_id, response.annotator_id)] = response
                    self._applied += 1

    def _index_batch(self, doc: dict) -> None:
        tasks = [
            AnnotationTask(
                task_id=t["task_id"],
                exchange_id=t["exchange_id"],
                iq=t["iq"],
                ia=t["ia"],
                fq=t["fq"],
                model_label=t["model_label"],
                template_id=doc["template_id"],
                required_annotators=doc["required_annotators"],
            )
            for t in doc["tasks"]
        ]
        batch_id = doc["batch_id"]
        self._batches[batch_id] = {
            "template_id": doc["template_id"],
            "required_annotators": doc["required_annotators"],
            "tasks": tasks,
        }
        self._batch_order.append(batch_id)
        for task in tasks:
            self._tasks[task.task_id] = task
            self._task_batch[task.task_id] = batch_id

    def _snapshot(self) -> None:
        tmp = self.snapshot_path.with_suffix(".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            json.dump({"applied": self._applied}, fh)
        tmp.replace(self.snapshot_path)

    # -- batches -------------------------------------------------------------

    def create_batch(self, tasks: list[AnnotationTask], template_id: str) -> str:
        if template_id not in TEMPLATES:
            raise AnnotationError(f"unknown template {template_id!r}")
        if not tasks:
            raise AnnotationError("a batch needs at least one task")
        with self._lock:
            batch_id = f"b{len(self._batch_order) + 1:04d}"
            # task ids are namespaced by batch so the response log stays unambiguous
            namespaced = [
                AnnotationTask(
                    task_id=f"{batch_id}-{t.task_id}",
                    exchange_id=t.exchange_id,
                    iq=t.iq,
                    ia=t.ia,
                    fq=t.fq,
                    model_label=t.model_label,
                    template_id=t.template_id,
                    required_annotators=t.required_annotators,
                )
                for t in tasks
            ]
            doc = {
                "batch_id": batch_id,
                "template_id": template_id,
                "required_annotators": namespaced[0].required_annotators,
                "tasks": [
                    {
                        "task_id": t.task_id,
                        "exchange_id": t.exchange_id,
                        "iq": t.iq,
                        "ia": t.ia,
                        "fq": t.fq,
                        "model_label": t.model_label,
                    }
                    for t in namespaced
                ],
            }
            path = self.batches_dir / f"{batch_id}.json"
            with path.open("w", encoding="utf-8") as fh:
                json.dump(doc, fh, ensure_ascii=False, indent=2)
            self._index_batch(doc)
            return batch_id

    def batch_ids(self) -> list[str]:
        with self._lock:
            return list(self._batch_order)

    def batch_tasks(self, batch_id: str) -> list[AnnotationTask]:
        with self._lock:
            if batch_id not in self._batches:
                raise UnknownBatchError(f"unknown batch {batch_id!r}")
            return list(self._batches[batch_id]["tasks"])

    def template_for(self, batch_id: str):
        with self._lock:
            if batch_id not in self._batches:
                raise UnknownBatchError(f"unknown batch {batch_id!r}")
            return TEMPLATES[self._batches[batch_id]["template_id"]]

    # -- assignment and submission -------------------------------------------

    def _response_count(self, task_id: str) -> int:
        return sum(1 for (tid, _) in self._responses if tid == task_id)

    def next_task(self, annotator_id: str, batch_id: str | None = None) -> AnnotationTask | None:
        """Open task with the fewest responses this annotator has not answered.

        Ties break by task creation order. Returns None when the annotator
        has answered everything still open.
        """
        with self._lock:
            if batch_id is not None and batch_id not in self._batches:
                raise UnknownBatchError(f"unknown batch {batch_id!r}")
            scope = [batch_id] if batch_id else self._batch_order
            best: AnnotationTask | None = None
            best_count = -1
            for bid in scope:
                for task in self._batches[bid]["tasks"]:
                    if (task.task_id, annotator_id) in self._responses:
                        continue
                    count = self._response_count(task.task_id)
                    if count >= task.required_annotators:
                        continue
                    if best is None or count < best_count:
                        best = task
                        best_count = count
            return best

    def submit(self, response: AnnotationResponse) -> dict:
        """Validate and durably record one response; atomic and idempotent.

        Duplicate (task, annotator) submissions are rejected; nothing is
        written unless validation passes.
        """
        with self._lock:
            task = self._tasks.get(response.task_id)
            if task is None:
                raise UnknownTaskError(f"unknown task {response.task_id!r}")
            key = (response.task_id, response.annotator_id)
            if key in self._responses:
                raise DuplicateSubmissionError(
                    f"annotator {response.annotator_id!r} already answered {response.task_id!r}"
                )
            if self._response_count(response.task_id) >= task.required_annotators:
                raise TaskCompleteError(f"task {response.task_id!r} already has enough responses")
            template = TEMPLATES[task.template_id]
            template.validate_answers(response.answers)

            entry = {
                "task_id": response.task_id,
                "annotator_id": response.annotator_id,
                "answers": response.answers,
                "elapsed_seconds": response.elapsed_seconds,
            }
            with self.log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
                fh.flush()
            self._responses[key] = response
            self._applied += 1
            if self._applied % _SNAPSHOT_EVERY == 0:
                self._snapshot()
            remaining = task.required_annotators - self._response_count(response.task_id)
            return {"status": "accepted", "task_complete": remaining <= 0}

    def batch_responses(self, batch_id: str) -> list[AnnotationResponse]:
        with self._lock:
            tasks = {t.task_id for t in self.batch_tasks(batch_id)}
            return [r for (tid, _), r in sorted(self._responses.items()) if tid in tasks]

    # -- reporting -----------------------------------------------------------

    def agreement(self, batch_id: str) -> dict:
        with self._lock:
            return agreement_report(
                self.batch_tasks(batch_id),
                self.batch_responses(batch_id),
                self.template_for(batch_id),
            )

    def summary(self, batch_id: str) -> dict:
        with self._lock:
            return aspect_summary(
                self.batch_tasks(batch_id),
                self.batch_responses(batch_id),
                self.template_for(batch_id),
            )

    def export_csv(self, batch_id: str) -> str:
        """One row per response, one column per question key; blanks for skips."""
        with self._lock:
            tasks = self.batch_tasks(batch_id)
            template = self.template_for(batch_id)
            keys = [q.key for q in template.questions]
            header = ["task_id", "exchange_id", "model_label", "annotator_id", "elapsed_seconds"] + keys
            lines = [",".join(header)]
            by_task = {t.task_id: t for t in tasks}
            for (task_id, annotator_id), r in sorted(self._responses.items()):
                task = by_task.get(task_id)
                if task is None:
                    continue
                cells = [
                    task.task_id,
                    task.exchange_id,
                    task.model_label,
                    annotator_id,
                    str(r.elapsed_seconds),
                ]
                cells += [str(r.answers[k]) if k in r.answers else "" for k in keys]
                lines.append(",".join(cells))
            return "\n".join(lines) + "\n"
