"""Dataset loading, validation, cleaning, and merging.

Three line-delimited JSON schemas share one loader:

* ``triplets``    {"id", "exchange_id", "iq", "ia", "fq", "source"}
* ``exchanges``   {"id", "iq", "ia"}
* ``generations`` {"exchange_id", "model", "fqs": [...]}

All files are UTF-8, one object per line. Validation errors carry the
1-based line number and the offending field.
"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

SOURCES = ("human", "synthetic")
SCHEMAS = ("triplets", "exchanges", "generations")

REMOVAL_REASONS = ("quality", "sensitive")


class CorpusError(ValueError):
    """Malformed records, unknown ids, schema violations."""


@dataclass(frozen=True)
class Exchange:
    id: str
    iq: str
    ia: str


@dataclass(frozen=True)
class Triplet:
    id: str
    exchange_id: str
    iq: str
    ia: str
    fq: str
    source: str


@dataclass(frozen=True)
class GenerationSet:
    exchange_id: str
    model: str
    fqs: tuple[str, ...]


@dataclass
class Dataset:
    schema: str
    records: list

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> list[str]:
        if self.schema == "generations":
            raise CorpusError("generation sets carry no record id")
        return [r.id for r in self.records]

    def exchange_ids(self) -> list[str]:
        """Distinct exchange ids in first-appearance order."""
        seen: dict[str, None] = {}
        for r in self.records:
            key = r.id if self.schema == "exchanges" else r.exchange_id
            seen.setdefault(key, None)
        return list(seen)

    def pair_map(self) -> dict[str, tuple[str, str]]:
        """exchange_id -> (iq, ia), first occurrence wins."""
        if self.schema == "generations":
            raise CorpusError("generation sets carry no question/answer text")
        out: dict[str, tuple[str, str]] = {}
        for r in self.records:
            key = r.id if self.schema == "exchanges" else r.exchange_id
            out.setdefault(key, (r.iq, r.ia))
        return out


@dataclass
class CleaningReport:
    input_count: int
    duplicates_removed: int = 0
    quality_removed: int = 0
    sensitive_removed: int = 0
    retained: int = 0
    removed_ids: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "duplicates_removed": self.duplicates_removed,
            "quality_removed": self.quality_removed,
            "sensitive_removed": self.sensitive_removed,
            "retained": self.retained,
            "removed_ids": [[rid, reason] for rid, reason in self.removed_ids],
        }


@dataclass(frozen=True)
class CorpusStats:
    triplet_count: int
    unique_pair_count: int
    fq_per_pair_mean: float
    source_breakdown: dict


def norm_text(text: str) -> str:
    """NFC normalization plus whitespace-run collapse; the dedup content key."""
    return re.sub(r"\s+", " ", unicodedata.normalize("NFC", text)).strip()


_BULLET_RE = re.compile(r"^[-–—•*>·]+\s*")
_ENUM_RE = re.compile(r"^\(?\d{1,3}[.):\]]\s*")
_QUOTE_PAIRS = {
    '"': '"',
    "'": "'",
    "“": "”",
    "‘": "’",
    "«": "»",
    "`": "`",
}


def normalize_fq(text: str) -> str:
    """Strip list markup from a follow-up question.

    Removes leading enumeration markers ("1.", "(2)", "3)"), bullet glyphs
    and dashes, one or more layers of surrounding quotes, and collapses
    whitespace. Interior punctuation is preserved. Idempotent. Raises
    CorpusError when nothing but markup remains.
    """
    s = unicodedata.normalize("NFC", text)
    prev = None
    while prev != s:
        prev = s
        s = s.strip()
        s = _BULLET_RE.sub("", s)
        s = _ENUM_RE.sub("", s)
        if len(s) >= 2 and _QUOTE_PAIRS.get(s[0]) == s[-1]:
            s = s[1:-1]
    s = re.sub(r"\s+", " ", s).strip()
    if not s:
        raise CorpusError(f"question is empty after stripping markup: {text!r}")
    return s


def _require_str(obj: dict, key: str, line_no: int, allow_blank: bool = False) -> str:
    if key not in obj:
        raise CorpusError(f"line {line_no}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, str):
        raise CorpusError(f"line {line_no}: field {key!r} must be a string")
    if not allow_blank and not value.strip():
        raise CorpusError(f"line {line_no}: field {key!r} must not be blank")
    return value


def load_dataset(path: str | Path, schema: str, exchanges: Dataset | None = None) -> Dataset:
    """Load and validate one line-delimited JSON file.

    When ``exchanges`` is given, every record's exchange_id must resolve into
    it (dangling ids raise with the line number). A standalone triplets file
    is self-contained and needs no universe.
    """
    if schema not in SCHEMAS:
        raise CorpusError(f"unknown schema {schema!r}, expected one of {SCHEMAS}")
    known_exchanges = set(exchanges.ids()) if exchanges is not None else None

    records: list = []
    seen_ids: set[str] = set()
    seen_sets: set[tuple[str, str]] = set()
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"line {line_no}: record must be a JSON object")

            if schema == "triplets":
                rid = _require_str(obj, "id", line_no)
                ex_id = _require_str(obj, "exchange_id", line_no)
                iq = _require_str(obj, "iq", line_no)
                ia = _require_str(obj, "ia", line_no)
                fq = _require_str(obj, "fq", line_no)
                source = _require_str(obj, "source", line_no)
                if source not in SOURCES:
                    raise CorpusError(
                        f"line {line_no}: field 'source' must be one of {SOURCES}, got {source!r}"
                    )
                if rid in seen_ids:
                    raise CorpusError(f"line {line_no}: duplicate id {rid!r}")
                seen_ids.add(rid)
                if known_exchanges is not None and ex_id not in known_exchanges:
                    raise CorpusError(f"line {line_no}: dangling exchange_id {ex_id!r}")
                records.append(Triplet(rid, ex_id, iq, ia, fq, source))

            elif schema == "exchanges":
                rid = _require_str(obj, "id", line_no)
                iq = _require_str(obj, "iq", line_no)
                ia = _require_str(obj, "ia", line_no)
                if rid in seen_ids:
                    raise CorpusError(f"line {line_no}: duplicate id {rid!r}")
                seen_ids.add(rid)
                records.append(Exchange(rid, iq, ia))

            else:  # generations
                ex_id = _require_str(obj, "exchange_id", line_no)
                model = _require_str(obj, "model", line_no)
                if "fqs" not in obj:
                    raise CorpusError(f"line {line_no}: missing field 'fqs'")
                fqs = obj["fqs"]
                if not isinstance(fqs, list) or not fqs:
                    raise CorpusError(f"line {line_no}: field 'fqs' must be a nonempty list")
                for i, fq in enumerate(fqs):
                    if not isinstance(fq, str) or not fq.strip():
                        raise CorpusError(
                            f"line {line_no}: field 'fqs' entry {i} must be a nonempty string"
                        )
                if len(set(fqs)) != len(fqs):
                    raise CorpusError(f"line {line_no}: field 'fqs' contains duplicate strings")
                key = (ex_id, model)
                if key in seen_sets:
                    raise CorpusError(
                        f"line {line_no}: duplicate generation set for exchange {ex_id!r} model {model!r}"
                    )
                seen_sets.add(key)
                if known_exchanges is not None and ex_id not in known_exchanges:
                    raise CorpusError(f"line {line_no}: dangling exchange_id {ex_id!r}")
                records.append(GenerationSet(ex_id, model, tuple(fqs)))

    return Dataset(schema, records)


def serialize(dataset: Dataset, path: str | Path) -> None:
    """Write line-delimited JSON with a fixed field order per schema."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for r in dataset.records:
            if dataset.schema == "triplets":
                obj = {
                    "id": r.id,
                    "exchange_id": r.exchange_id,
                    "iq": r.iq,
                    "ia": r.ia,
                    "fq": r.fq,
                    "source": r.source,
                }
            elif dataset.schema == "exchanges":
                obj = {"id": r.id, "iq": r.iq, "ia": r.ia}
            else:
                obj = {"exchange_id": r.exchange_id, "model": r.model, "fqs": list(r.fqs)}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_removal_list(path: str | Path) -> list[str]:
    """One id per line; blank lines and '#' comments ignored."""
    ids: list[str] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if line:
                ids.append(line)
    return ids


def deduplicate(dataset: Dataset) -> tuple[Dataset, list[str]]:
    """Drop triplets whose normalized (iq, ia, fq) content repeats.

    First occurrence in input order wins. Returns the surviving dataset and
    the removed ids in input order.
    """
    if dataset.schema != "triplets":
        raise CorpusError("deduplicate expects a triplets dataset")
    seen: set[tuple[str, str, str]] = set()
    kept: list[Triplet] = []
    removed: list[str] = []
    for t in dataset.records:
        key = (norm_text(t.iq), norm_text(t.ia), norm_text(t.fq))
        if key in seen:
            removed.append(t.id)
        else:
            seen.add(key)
            kept.append(t)
    return Dataset("triplets", kept), removed


def apply_removal_list(dataset: Dataset, ids: Sequence[str], reason: str) -> Dataset:
    """Remove the listed record ids; every id must be present."""
    if reason not in REMOVAL_REASONS:
        raise CorpusError(f"unknown removal reason {reason!r}, expected one of {REMOVAL_REASONS}")
    wanted = set(ids)
    present = set(dataset.ids())
    missing = sorted(wanted - present)
    if missing:
        raise CorpusError(f"removal list ({reason}) names unknown ids: {', '.join(missing)}")
    kept = [r for r in dataset.records if r.id not in wanted]
    return Dataset(dataset.schema, kept)


def flag_sensitive_candidates(dataset: Dataset, keywords: Sequence[str]) -> list[tuple[str, list[str]]]:
    """Records whose iq/ia/fq contain a keyword at word-token boundaries.

    Case-insensitive; 'crime' does not match inside 'crimean'. Results are
    ordered by record id, each with the matched keywords sorted.
    """
    patterns = [
        (kw, re.compile(rf"(?<!\w){re.escape(kw)}(?!\w)", re.IGNORECASE)) for kw in keywords
    ]
    hits: list[tuple[str, list[str]]] = []
    for r in dataset.records:
        fields = (r.iq, r.ia, r.fq) if dataset.schema == "triplets" else (r.iq, r.ia)
        matched = sorted({kw for kw, pat in patterns if any(pat.search(f) for f in fields)})
        if matched:
            hits.append((r.id, matched))
    hits.sort(key=lambda item: item[0])
    return hits


def clean_dataset(
    dataset: Dataset,
    quality_ids: Sequence[str] = (),
    sensitive_ids: Sequence[str] = (),
) -> tuple[Dataset, CleaningReport]:
    """Dedup, then apply quality and sensitive removal lists, with bookkeeping."""
    report = CleaningReport(input_count=len(dataset))
    deduped, dup_ids = deduplicate(dataset)
    report.duplicates_removed = len(dup_ids)
    report.removed_ids.extend((rid, "duplicate") for rid in dup_ids)

    current = deduped
    if quality_ids:
        current = apply_removal_list(current, quality_ids, "quality")
        report.removed_ids.extend((rid, "quality") for rid in quality_ids)
    report.quality_removed = len(quality_ids)
    if sensitive_ids:
        current = apply_removal_list(current, sensitive_ids, "sensitive")
        report.removed_ids.extend((rid, "sensitive") for rid in sensitive_ids)
    report.sensitive_removed = len(sensitive_ids)

    report.retained = len(current)
    expected = (
        report.input_count
        - report.duplicates_removed
        - report.quality_removed
        - report.sensitive_removed
    )
    if report.retained != expected:
        raise CorpusError(
            f"cleaning arithmetic broke: retained {report.retained}, expected {expected}"
        )
    return current, report


def merge(human: Dataset, synthetic: Dataset) -> Dataset:
    """Union of two triplet datasets: human first, synthetic ordered by exchange id.

    Triplet-id collisions across the inputs raise. The union is re-deduplicated
    on content, so a synthetic copy of a human question is dropped.
    """
    if human.schema != "triplets" or synthetic.schema != "triplets":
        raise CorpusError("merge expects two triplet datasets")
    collisions = sorted(set(human.ids()) & set(synthetic.ids()))
    if collisions:
        raise CorpusError(f"id collision between datasets: {', '.join(collisions)}")
    ordered_synth = sorted(synthetic.records, key=lambda t: t.exchange_id)
    union = Dataset("triplets", list(human.records) + ordered_synth)
    merged, _ = deduplicate(union)
    return merged


def stats(dataset: Dataset) -> CorpusStats:
    """Counts, unique (iq, ia) pairs, and mean questions per pair (4 decimals)."""
    if dataset.schema != "triplets":
        raise CorpusError("stats expects a triplets dataset")
    n = len(dataset)
    pairs = {(norm_text(t.iq), norm_text(t.ia)) for t in dataset.records}
    mean = round(n / len(pairs), 4) if pairs else 0.0
    breakdown = dict(Counter(t.source for t in dataset.records))
    return CorpusStats(n, len(pairs), mean, breakdown)


def exchanges_from_triplets(dataset: Dataset) -> Dataset:
    """Project a triplets dataset onto its distinct exchanges (first text wins)."""
    if dataset.schema != "triplets":
        raise CorpusError("exchanges_from_triplets expects a triplets dataset")
    out: list[Exchange] = []
    seen: set[str] = set()
    for t in dataset.records:
        if t.exchange_id not in seen:
            seen.add(t.exchange_id)
            out.append(Exchange(t.exchange_id, t.iq, t.ia))
    return Dataset("exchanges", out)
