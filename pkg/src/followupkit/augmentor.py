"""Three-stage teacher pipeline that fabricates follow-up questions.

Per exchange: (1) collect perspective answers in one shared conversation,
(2) synthesize them into a comprehensive answer, (3) generate candidate
follow-up questions in a single prompt and validate each against three
judges. The pipeline checkpoints after every exchange so an interrupted run
resumes without redoing completed work, and all outputs are assembled in
exchange input order so reruns are byte-identical.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import prompts
from .corpus import CorpusError, Dataset, Exchange, Triplet, normalize_fq
from .gateway import AuthenticationError, Gateway, GatewayError
from .infogain import JudgeError, judge_answerability, judge_grounded

logger = logging.getLogger(__name__)


class StageFailure(RuntimeError):
    """A pipeline stage could not produce usable output for one exchange."""

    def __init__(self, stage: str, kind: str, detail: str = ""):
        super().__init__(f"{stage}: {kind}" + (f" ({detail})" if detail else ""))
        self.stage = stage
        self.kind = kind


@dataclass(frozen=True)
class PerspectiveAnswer:
    exchange_id: str
    index: int  # 1-based, contiguous
    text: str


@dataclass
class PerspectiveRun:
    answers: list[PerspectiveAnswer]
    refusals: int
    transcript_refs: list[str]


@dataclass(frozen=True)
class ComprehensiveAnswer:
    exchange_id: str
    text: str
    perspectives: tuple[str, ...]
    transcript_refs: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "exchange_id": self.exchange_id,
            "ca": self.text,
            "perspectives": list(self.perspectives),
            "transcript_refs": list(self.transcript_refs),
        }


@dataclass
class CandidateFQ:
    exchange_id: str
    text: str
    answerable_by_ca: bool | None = None
    answerable_by_ia: bool | None = None
    grounded: bool | None = None

    @property
    def accepted(self) -> bool | None:
        if None in (self.answerable_by_ca, self.answerable_by_ia, self.grounded):
            return None
        return self.answerable_by_ca and not self.answerable_by_ia and self.grounded


@dataclass
class AugmentationConfig:
    num_perspectives: int = 3
    max_candidates_per_exchange: int = 15
    validate_candidates: bool = True
    prompt_templates: dict[str, str] = field(default_factory=lambda: dict(prompts.DEFAULT_TEMPLATES))

    def __post_init__(self):
        if self.num_perspectives < 1:
            raise ValueError("num_perspectives must be >= 1")
        if self.max_candidates_per_exchange < 1:
            raise ValueError("max_candidates_per_exchange must be >= 1")
        prompts.validate_templates(self.prompt_templates)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def generate_perspectives(
    exchange: Exchange, n: int, gw: Gateway, templates: dict[str, str]
) -> PerspectiveRun:
    """Collect up to n perspective answers in one shared conversation.

    A refusal (or blank reply) truncates the list; zero usable answers is a
    stage failure.
    """
    conversation: list[tuple[str, str]] = [
        ("user", prompts.render(templates, "initial_answer", IQ=exchange.iq))
    ]
    answers: list[PerspectiveAnswer] = []
    refs: list[str] = []
    refusals = 0
    for turn in range(1, n + 1):
        if turn > 1:
            conversation.append(("assistant", answers[-1].text))
            conversation.append(("user", prompts.render(templates, "next_answer")))
        response, ref = gw.chat(conversation)
        refs.append(ref)
        if response.refused or not response.content.strip():
            refusals += 1
            break
        answers.append(PerspectiveAnswer(exchange.id, turn, response.content.strip()))
    if not answers:
        raise StageFailure("perspectives", "refusal", exchange.id)
    return PerspectiveRun(answers=answers, refusals=refusals, transcript_refs=refs)


def synthesize_comprehensive(
    exchange: Exchange,
    run: PerspectiveRun,
    gw: Gateway,
    templates: dict[str, str],
) -> ComprehensiveAnswer:
    """Fuse the perspective answers into one comprehensive answer."""
    numbered = "\n\n".join(f"{a.index}. {a.text}" for a in run.answers)
    body = prompts.render(templates, "synthesis", IQ=exchange.iq, ANSWERS=numbered)
    response, ref = gw.chat([("user", body)])
    if response.refused:
        raise StageFailure("synthesis", "refusal", exchange.id)
    text = response.content.strip()
    if not text:
        raise StageFailure("synthesis", "empty", exchange.id)
    return ComprehensiveAnswer(
        exchange_id=exchange.id,
        text=text,
        perspectives=tuple(a.text for a in run.answers),
        transcript_refs=tuple(run.transcript_refs + [ref]),
    )


def generate_followups(
    exchange: Exchange,
    ca: ComprehensiveAnswer,
    gw: Gateway,
    templates: dict[str, str],
    max_candidates: int,
) -> list[CandidateFQ]:
    """One prompt produces all candidates, split on the literal separator.

    Parts are trimmed and normalized; empties and exact duplicates drop; the
    cap keeps the first max_candidates.
    """
    body = prompts.render(
        templates, "followup", IQ=exchange.iq, IA=exchange.ia, CA=ca.text
    )
    response, _ = gw.chat([("user", body)])
    if response.refused:
        raise StageFailure("followups", "refusal", exchange.id)
    seen: set[str] = set()
    candidates: list[CandidateFQ] = []
    for part in response.content.split(prompts.CANDIDATE_SEPARATOR):
        part = part.strip()
        if not part:
            continue
        try:
            text = normalize_fq(part)
        except CorpusError:
            continue
        if text in seen:
            continue
        seen.add(text)
        candidates.append(CandidateFQ(exchange_id=exchange.id, text=text))
        if len(candidates) == max_candidates:
            break
    if not candidates:
        raise StageFailure("followups", "empty", exchange.id)
    return candidates


def validate_candidate(
    candidate: CandidateFQ,
    exchange: Exchange,
    ca: ComprehensiveAnswer,
    gw: Gateway,
    templates: dict[str, str],
) -> CandidateFQ:
    """Fill the three judge verdicts: CA-answerable, IA-answerable, grounded.

    A gateway failure or unparseable judge leaves the verdicts unset (the
    candidate surfaces in the report instead of disappearing). Credential
    failures propagate.
    """
    try:
        ca_ok = judge_answerability(candidate.text, ca.text, gw, templates)
        ia_ok = judge_answerability(candidate.text, exchange.ia, gw, templates)
        grounded = judge_grounded(candidate.text, exchange.iq, exchange.ia, gw, templates)
    except AuthenticationError:
        raise
    except (GatewayError, JudgeError) as exc:
        logger.warning("judge failure for %r: %s", candidate.text[:60], exc)
        return replace(candidate)
    return replace(
        candidate, answerable_by_ca=ca_ok, answerable_by_ia=ia_ok, grounded=grounded
    )


# ---------------------------------------------------------------------------
# Batch driver with checkpointing
# ---------------------------------------------------------------------------


@dataclass
class ExchangeOutcome:
    exchange_id: str
    status: str  # "ok" | "failed"
    error: str | None
    triplets: list[dict]
    ca: dict | None
    row: dict


@dataclass
class AugmentationReport:
    totals: dict
    rows: list[dict]

    def to_dict(self) -> dict:
        return {"totals": self.totals, "rows": self.rows}

    def to_csv(self) -> str:
        cols = (
            "exchange_id", "candidates", "accepted", "rejected_by_ia",
            "rejected_by_ca", "rejected_grounding", "refusals", "judge_failures",
            "status",
        )
        lines = [",".join(cols)]
        for row in self.rows:
            lines.append(",".join(str(row[c]) for c in cols))
        return "\n".join(lines) + "\n"


@dataclass
class AugmentationResult:
    synthetic: Dataset
    ca_store: list[dict]
    report: AugmentationReport


def _process_exchange(
    exchange: Exchange, config: AugmentationConfig, gw: Gateway
) -> ExchangeOutcome:
    row = {
        "exchange_id": exchange.id,
        "status": "ok",
        "candidates": 0,
        "accepted": 0,
        "rejected_by_ia": 0,
        "rejected_by_ca": 0,
        "rejected_grounding": 0,
        "judge_failures": 0,
        "refusals": 0,
    }
    templates = config.prompt_templates
    try:
        run = generate_perspectives(exchange, config.num_perspectives, gw, templates)
        row["refusals"] += run.refusals
        ca = synthesize_comprehensive(exchange, run, gw, templates)
        candidates = generate_followups(
            exchange, ca, gw, templates, config.max_candidates_per_exchange
        )
    except StageFailure as exc:
        if exc.kind == "refusal":
            row["refusals"] += 1
        row["status"] = "failed"
        return ExchangeOutcome(exchange.id, "failed", str(exc), [], None, row)
    except (GatewayError,) as exc:
        if isinstance(exc, AuthenticationError):
            raise
        row["status"] = "failed"
        return ExchangeOutcome(exchange.id, "failed", str(exc), [], None, row)

    row["candidates"] = len(candidates)
    emitted: list[dict] = []
    serial = 0
    for candidate in candidates:
        if config.validate_candidates:
            candidate = validate_candidate(candidate, exchange, ca, gw, templates)
            accepted = candidate.accepted
            if accepted is None:
                row["judge_failures"] += 1
                continue
            if not candidate.answerable_by_ca:
                row["rejected_by_ca"] += 1
                continue
            if candidate.answerable_by_ia:
                row["rejected_by_ia"] += 1
                continue
            if not candidate.grounded:
                row["rejected_grounding"] += 1
                continue
        serial += 1
        row["accepted"] += 1
        emitted.append(
            {
                "id": f"{exchange.id}-s{serial:03d}",
                "exchange_id": exchange.id,
                "iq": exchange.iq,
                "ia": exchange.ia,
                "fq": candidate.text,
                "source": "synthetic",
            }
        )
    return ExchangeOutcome(exchange.id, "ok", None, emitted, ca.to_dict(), row)


def load_checkpoint(path: str | Path) -> dict[str, ExchangeOutcome]:
    """Completed exchanges keyed by id; tolerates a truncated final line."""
    path = Path(path)
    done: dict[str, ExchangeOutcome] = {}
    if not path.exists():
        return done
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                logger.warning("discarding truncated checkpoint tail")
                break
            if obj["exchange_id"] in done:
                continue
            done[obj["exchange_id"]] = ExchangeOutcome(
                exchange_id=obj["exchange_id"],
                status=obj["status"],
                error=obj.get("error"),
                triplets=obj.get("triplets", []),
                ca=obj.get("ca"),
                row=obj["row"],
            )
    return done


def _append_checkpoint(path: Path, outcome: ExchangeOutcome) -> None:
    entry = {
        "exchange_id": outcome.exchange_id,
        "status": outcome.status,
        "error": outcome.error,
        "triplets": outcome.triplets,
        "ca": outcome.ca,
        "row": outcome.row,
    }
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def augment_dataset(
    exchanges: Dataset,
    config: AugmentationConfig,
    gw: Gateway,
    checkpoint_path: str | Path,
    resume: bool = True,
    strict: bool = False,
    jobs: int = 1,
) -> AugmentationResult:
    """Run the pipeline over every exchange, checkpointing per exchange.

    A rerun pointed at the same checkpoint skips completed exchange ids.
    Outputs are assembled in exchange input order, so a completed run and an
    interrupted-then-resumed run produce identical files, with or without
    parallelism.
    """
    if exchanges.schema != "exchanges":
        raise CorpusError("augment_dataset expects an exchanges dataset")
    checkpoint_path = Path(checkpoint_path)
    checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
    done = load_checkpoint(checkpoint_path) if resume else {}
    if not resume and checkpoint_path.exists():
        checkpoint_path.unlink()

    pending = [ex for ex in exchanges.records if ex.id not in done]
    if jobs <= 1 or len(pending) <= 1:
        for exchange in pending:
            outcome = _process_exchange(exchange, config, gw)
            done[exchange.id] = outcome
            _append_checkpoint(checkpoint_path, outcome)
            if strict and outcome.status == "failed":
                raise StageFailure("exchange", "failed", f"{exchange.id}: {outcome.error}")
    else:
        ckpt_lock = threading.Lock()
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_process_exchange, ex, config, gw): ex for ex in pending}
            for future in as_completed(futures):
                outcome = future.result()
                with ckpt_lock:
                    done[outcome.exchange_id] = outcome
                    _append_checkpoint(checkpoint_path, outcome)
                if strict and outcome.status == "failed":
                    raise StageFailure(
                        "exchange", "failed", f"{outcome.exchange_id}: {outcome.error}"
                    )

    triplets: list[Triplet] = []
    ca_store: list[dict] = []
    rows: list[dict] = []
    totals = {
        "exchanges": len(exchanges),
        "completed": 0,
        "failed": 0,
        "candidates": 0,
        "accepted": 0,
        "rejected_by_ia": 0,
        "rejected_by_ca": 0,
        "rejected_grounding": 0,
        "judge_failures": 0,
        "refusals": 0,
    }
    failed_ids: list[str] = []
    for exchange in exchanges.records:
        outcome = done[exchange.id]
        rows.append(outcome.row)
        if outcome.status == "ok":
            totals["completed"] += 1
        else:
            totals["failed"] += 1
            failed_ids.append(exchange.id)
        for key in (
            "candidates", "accepted", "rejected_by_ia", "rejected_by_ca",
            "rejected_grounding", "judge_failures", "refusals",
        ):
            totals[key] += outcome.row[key]
        for obj in outcome.triplets:
            triplets.append(
                Triplet(
                    id=obj["id"],
                    exchange_id=obj["exchange_id"],
                    iq=obj["iq"],
                    ia=obj["ia"],
                    fq=obj["fq"],
                    source=obj["source"],
                )
            )
        if outcome.ca is not None:
            ca_store.append(outcome.ca)
    totals["failed_exchanges"] = failed_ids

    report = AugmentationReport(totals=totals, rows=rows)
    return AugmentationResult(
        synthetic=Dataset("triplets", triplets), ca_store=ca_store, report=report
    )


def write_ca_store(ca_store: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for entry in ca_store:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


def load_ca_store(path: str | Path) -> dict[str, str]:
    """exchange_id -> comprehensive answer text."""
    out: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["exchange_id"]] = obj["ca"]
    return out
