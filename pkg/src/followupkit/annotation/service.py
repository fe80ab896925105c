"""HTTP JSON API over the annotation store.

Endpoints:

* ``POST /batches``                  create a batch from a dataset file
* ``GET  /annotators/{id}/next``     next open task (blind: no model label)
* ``POST /responses``                submit one response
* ``GET  /batches/{id}/agreement``   pairwise kappa report
* ``GET  /batches/{id}/summary``     per-model aspect means/variances
* ``GET  /batches/{id}/export``      CSV of all responses
* ``GET  /guidelines/{template_id}`` static guideline page
"""

from __future__ import annotations

import html
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import HTMLResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .. import corpus
from . import (
    TEMPLATES,
    AnnotationError,
    AnnotationResponse,
    SubmissionError,
    SurveyTemplate,
    create_batch,
)
from .store import (
    AnnotationStore,
    DuplicateSubmissionError,
    TaskCompleteError,
    UnknownBatchError,
    UnknownTaskError,
)


class BatchRequest(BaseModel):
    template_id: str
    dataset_path: str
    schema_name: str = Field(default="triplets", alias="schema")
    exchanges_path: str | None = None
    sample_size: int
    seed: int
    required_annotators: int = 3

    model_config = {"populate_by_name": True}


class ResponsePayload(BaseModel):
    task_id: str
    annotator_id: str
    answers: dict[str, int]
    elapsed_seconds: float = 0.0


def _question_payload(template: SurveyTemplate) -> list[dict]:
    return [
        {
            "key": q.key,
            "prompt": q.prompt,
            "options": [{"label": o.label, "value": o.value} for o in q.options],
            "conditional_on": list(q.conditional_on) if q.conditional_on else None,
        }
        for q in template.questions
    ]


def guidelines_html(template: SurveyTemplate) -> str:
    """Static guideline page rendered from the template definition."""
    rows = []
    for q in template.questions:
        scale = "".join(
            f"<li><b>{html.escape(o.label)}</b> (recorded as {o.value})</li>" for o in q.options
        )
        cond = ""
        if q.conditional_on:
            dep, trigger = q.conditional_on
            cond = (
                f"<p class='cond'>Answer this only when your <i>{html.escape(dep)}</i> "
                f"answer was recorded as {trigger}; otherwise it stays hidden.</p>"
            )
        rows.append(
            f"<section><h3>{html.escape(q.key)}</h3>"
            f"<p>{html.escape(q.prompt)}</p><ul>{scale}</ul>{cond}</section>"
        )
    intro = (
        "<p>You will see a conversation (a question and its answer) plus one "
        "follow-up question. Judge only the follow-up question shown. Read the "
        "whole conversation first; a follow-up is valid when it is a grammatical "
        "question that a curious reader could ask next. When a follow-up is not "
        "valid, the remaining aspects are skipped automatically.</p>"
        "<p>Example: for the conversation 'Why do jet trails linger?' answered "
        "with a note about engine exhaust, the follow-up 'What temperature does "
        "the exhaust reach?' is valid and related; 'Buy my mixtape?' is not valid.</p>"
    )
    body = (
        f"<h1>Annotation guidelines: {html.escape(template.template_id)}</h1>"
        + intro
        + "".join(rows)
    )
    return (
        "<!doctype html><html><head><meta charset='utf-8'>"
        f"<title>Guidelines: {html.escape(template.template_id)}</title>"
        "<style>body{font-family:sans-serif;max-width:48rem;margin:2rem auto;"
        "padding:0 1rem;line-height:1.5}section{border-top:1px solid #ccc;"
        "padding-top:.5rem}.cond{color:#555}</style></head>"
        f"<body>{body}</body></html>"
    )


def create_app(store: AnnotationStore, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="followupkit annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.post("/batches", status_code=201)
    def post_batch(req: BatchRequest) -> dict:
        try:
            if req.schema_name == "triplets":
                data = corpus.load_dataset(req.dataset_path, "triplets")
                tasks = create_batch(
                    data,
                    sample_size=req.sample_size,
                    seed=req.seed,
                    template_id=req.template_id,
                    required_annotators=req.required_annotators,
                )
            elif req.schema_name == "generations":
                if not req.exchanges_path:
                    raise AnnotationError("generations batches need exchanges_path")
                gens = corpus.load_dataset(req.dataset_path, "generations")
                exchanges = corpus.load_dataset(req.exchanges_path, "exchanges")
                tasks = create_batch(
                    gens.records,
                    sample_size=req.sample_size,
                    seed=req.seed,
                    template_id=req.template_id,
                    exchanges=exchanges,
                    required_annotators=req.required_annotators,
                )
            else:
                raise AnnotationError(f"unsupported schema {req.schema_name!r}")
            batch_id = store.create_batch(tasks, req.template_id)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except (AnnotationError, corpus.CorpusError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"batch_id": batch_id, "task_count": len(tasks)}

    @app.get("/annotators/{annotator_id}/next")
    def get_next(annotator_id: str, batch: str | None = Query(default=None)) -> dict:
        try:
            task = store.next_task(annotator_id, batch_id=batch)
        except UnknownBatchError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if task is None:
            return {"task": None}
        template = TEMPLATES[task.template_id]
        payload = task.public_dict()
        payload["batch_id"] = store._task_batch[task.task_id]
        payload["questions"] = _question_payload(template)
        return {"task": payload}

    @app.post("/responses", status_code=201)
    def post_response(payload: ResponsePayload) -> dict:
        response = AnnotationResponse(
            task_id=payload.task_id,
            annotator_id=payload.annotator_id,
            answers=dict(payload.answers),
            elapsed_seconds=payload.elapsed_seconds,
        )
        try:
            return store.submit(response)
        except UnknownTaskError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except DuplicateSubmissionError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except TaskCompleteError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except SubmissionError as exc:
            raise HTTPException(
                status_code=400,
                detail={"message": str(exc), "field": exc.field_key, "code": exc.code},
            )

    @app.get("/batches/{batch_id}/agreement")
    def get_agreement(batch_id: str) -> dict:
        try:
            return store.agreement(batch_id)
        except UnknownBatchError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except AnnotationError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.get("/batches/{batch_id}/summary")
    def get_summary(batch_id: str) -> dict:
        try:
            return store.summary(batch_id)
        except UnknownBatchError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/batches/{batch_id}/export")
    def get_export(batch_id: str) -> PlainTextResponse:
        try:
            csv_text = store.export_csv(batch_id)
        except UnknownBatchError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return PlainTextResponse(csv_text, media_type="text/csv")

    @app.get("/guidelines/{template_id}")
    def get_guidelines(template_id: str) -> HTMLResponse:
        template = TEMPLATES.get(template_id)
        if template is None:
            raise HTTPException(status_code=404, detail=f"unknown template {template_id!r}")
        return HTMLResponse(guidelines_html(template))

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
