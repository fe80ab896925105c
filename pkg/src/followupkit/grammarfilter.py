"""Rule-based validity filter for generated follow-up questions.

A question survives when all four clauses hold:

1. it contains a question mark terminating some sentence,
2. at least one such sentence is in question form (WH-word or fronted
   auxiliary/modal, allowing up to three leading vocative/connective tokens),
3. it contains none of the configured invalid literal tokens,
4. no contiguous n-token window of it repeats verbatim inside the
   exchange's initial question or initial answer.

Failed clauses are reported as a set drawn from {no_question_mark,
not_question_form, invalid_token, duplicated_span}; every clause is always
evaluated, there is no short-circuiting in the verdict.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

WH_WORDS = ("what", "why", "where", "when", "who", "which", "how", "whose", "whom")
AUX_WORDS = (
    "is", "are", "was", "were", "do", "does", "did", "can", "could", "will",
    "would", "should", "has", "have", "had", "may", "might", "must", "am",
)

FAILURE_CODES = ("no_question_mark", "not_question_form", "invalid_token", "duplicated_span")

# Tokens that survive span matching: lowercase words keeping apostrophes.
_SPAN_TOKEN_RE = re.compile(r"[a-z0-9']+")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")
_TRAILING_JUNK = "\"'”’»`)] "
_LEAD_WINDOW = 3  # tokens allowed before the WH/auxiliary trigger


@dataclass
class FilterConfig:
    invalid_tokens: tuple[str, ...] = ("<QUS>", "<EQT>")
    dup_ngram_n: int = 8
    wh_words: tuple[str, ...] = WH_WORDS
    aux_words: tuple[str, ...] = AUX_WORDS

    def __post_init__(self):
        if self.dup_ngram_n < 2:
            raise ValueError("dup_ngram_n must be >= 2")


@dataclass(frozen=True)
class FilterVerdict:
    fq: str
    valid: bool
    failed_checks: frozenset[str]


def _question_sentences(text: str) -> list[str]:
    """Sentences that end with '?' once trailing quotes/whitespace are peeled."""
    out = []
    for sentence in _SENTENCE_SPLIT_RE.split(text):
        trimmed = sentence.rstrip(_TRAILING_JUNK)
        if trimmed.endswith("?"):
            out.append(sentence)
    return out


def contains_question_mark(fq: str) -> bool:
    return bool(_question_sentences(fq))


def is_question_form(fq: str, config: FilterConfig | None = None) -> bool:
    """Some '?'-terminated sentence leads with a WH-word or auxiliary/modal.

    The trigger may be preceded by at most three vocative/connective tokens
    ("So, what is ..." counts; "10000 meters? really?" does not).
    """
    config = config or FilterConfig()
    triggers = {w.lower() for w in config.wh_words} | {w.lower() for w in config.aux_words}
    for sentence in _question_sentences(fq):
        tokens = [t for t in _SPAN_TOKEN_RE.findall(sentence.lower())]
        head = tokens[: _LEAD_WINDOW + 1]
        if any(t in triggers for t in head):
            return True
    return False


def contains_invalid_token(fq: str, config: FilterConfig | None = None) -> bool:
    """Case-sensitive literal containment of any configured token."""
    config = config or FilterConfig()
    return any(token in fq for token in config.invalid_tokens)


def span_tokens(text: str) -> list[str]:
    """Lowercase tokens with punctuation stripped, apostrophes kept."""
    return _SPAN_TOKEN_RE.findall(text.lower())


def _windows(tokens: list[str], n: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def contains_duplicated_span(fq: str, iq: str, ia: str, config: FilterConfig | None = None) -> bool:
    """True when any contiguous n-token window of fq appears verbatim in iq or ia."""
    config = config or FilterConfig()
    n = config.dup_ngram_n
    fq_windows = _windows(span_tokens(fq), n)
    if not fq_windows:
        return False
    context_windows = _windows(span_tokens(iq), n) | _windows(span_tokens(ia), n)
    return bool(fq_windows & context_windows)


def is_valid_question(fq: str, iq: str, ia: str, config: FilterConfig | None = None) -> FilterVerdict:
    """Evaluate all four clauses and report every failure."""
    config = config or FilterConfig()
    failed = set()
    if not contains_question_mark(fq):
        failed.add("no_question_mark")
    if not is_question_form(fq, config):
        failed.add("not_question_form")
    if contains_invalid_token(fq, config):
        failed.add("invalid_token")
    if contains_duplicated_span(fq, iq, ia, config):
        failed.add("duplicated_span")
    return FilterVerdict(fq=fq, valid=not failed, failed_checks=frozenset(failed))


@dataclass
class ModelFilterRow:
    model: str
    total: int
    ungrammatical: int
    pct_ungrammatical: float | None  # None when total == 0 (undefined)


@dataclass
class FilterReport:
    rows: list[ModelFilterRow]
    verdicts: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "model": r.model,
                    "total": r.total,
                    "ungrammatical": r.ungrammatical,
                    "pct_ungrammatical": r.pct_ungrammatical,
                }
                for r in self.rows
            ]
        }


def filter_report(generation_sets, pair_map: dict[str, tuple[str, str]], config: FilterConfig | None = None) -> FilterReport:
    """Per-model ungrammatical percentages plus a per-question verdict dump.

    ``pair_map`` supplies (iq, ia) per exchange id for the span clause; a
    generation set whose exchange is missing from it raises KeyError with the
    exchange id.
    """
    config = config or FilterConfig()
    totals: dict[str, int] = {}
    bad: dict[str, int] = {}
    verdicts: list[dict] = []
    for gen in generation_sets:
        if gen.exchange_id not in pair_map:
            raise KeyError(f"no exchange text for generation set {gen.exchange_id!r}")
        iq, ia = pair_map[gen.exchange_id]
        totals.setdefault(gen.model, 0)
        for fq in gen.fqs:
            verdict = is_valid_question(fq, iq, ia, config)
            totals[gen.model] = totals.get(gen.model, 0) + 1
            if not verdict.valid:
                bad[gen.model] = bad.get(gen.model, 0) + 1
            verdicts.append(
                {
                    "model": gen.model,
                    "exchange_id": gen.exchange_id,
                    "fq": fq,
                    "valid": verdict.valid,
                    "failed_checks": sorted(verdict.failed_checks),
                }
            )
    rows = []
    for model in sorted(totals):
        total = totals[model]
        n_bad = bad.get(model, 0)
        pct = round(100.0 * n_bad / total, 2) if total else None
        rows.append(ModelFilterRow(model, total, n_bad, pct))
    return FilterReport(rows=rows, verdicts=verdicts)
