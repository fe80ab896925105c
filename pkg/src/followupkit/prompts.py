"""Prompt templates for the teacher pipeline and the yes/no judges.

Stage keys and their required placeholders:

* ``initial_answer``  {IQ}
* ``next_answer``     (none; the conversation history carries context)
* ``synthesis``       {IQ}, {ANSWERS}
* ``followup``        {IQ}, {IA}, {CA}
* ``judge_answerable``{QUESTION}, {CONTEXT}
* ``judge_grounded``  {FQ}, {IQ}, {IA}

Defaults are embedded; any stage can be overridden from a JSON file mapping
stage name to template text. Overrides are validated for the required
placeholders before use.
"""

from __future__ import annotations

import json
from pathlib import Path

DEFAULT_TEMPLATES: dict[str, str] = {
    "initial_answer": (
        "Question: {IQ}\n\n"
        "Generate an answer focused on a single perspective only, without any "
        "conversational fillers. Do not repeat the question in the answer."
    ),
    "next_answer": (
        "Please provide a new answer focused on a different perspective, ensuring "
        "no overlap with previous answers. Focus on unique aspects or insights not "
        "covered earlier, and provide the answer only without any conversational "
        "fillers. Do not repeat the question in the answer."
    ),
    "synthesis": (
        "Question: {IQ}\n\n"
        "Answers:\n{ANSWERS}\n\n"
        "Synthesize the following answers into a single, comprehensive response. "
        "Integrate the key points and insights from each answer, ensuring a cohesive "
        "and well-rounded explanation. The final answer should be thorough and "
        "address multiple aspects of the question without unnecessary repetition."
    ),
    "followup": (
        "Original question: {IQ}\n"
        "Original answer: {IA}\n"
        "Complete answer: {CA}\n\n"
        "Generate all possible follow-up questions as candidates. These follow-up "
        "questions must be related to the original question, but must not be "
        "rephrases of the original question. These follow-up questions should be "
        "answerable by the complete answer. These follow-up questions should not be "
        "answered, covered, or detailed by the original answer, but must target "
        "terminologies mentioned in the original answer. Separate each follow-up "
        "question with `<sep>`."
    ),
    "judge_answerable": (
        "Context:\n{CONTEXT}\n\n"
        "Question: {QUESTION}\n\n"
        "Does the context above fully answer the question? Reply with a single "
        "word, YES or NO."
    ),
    "judge_grounded": (
        "Initial question: {IQ}\n"
        "Initial answer: {IA}\n"
        "Follow-up question: {FQ}\n\n"
        "Is the follow-up question grounded in terminology or context that appears "
        "in the initial question or in the initial answer? Reply with a single "
        "word, YES or NO."
    ),
}

REQUIRED_PLACEHOLDERS: dict[str, frozenset[str]] = {
    "initial_answer": frozenset({"IQ"}),
    "next_answer": frozenset(),
    "synthesis": frozenset({"IQ", "ANSWERS"}),
    "followup": frozenset({"IQ", "IA", "CA"}),
    "judge_answerable": frozenset({"QUESTION", "CONTEXT"}),
    "judge_grounded": frozenset({"FQ", "IQ", "IA"}),
}

CANDIDATE_SEPARATOR = "<sep>"


class TemplateError(ValueError):
    """A template is missing or lacks a required placeholder."""


def validate_templates(templates: dict[str, str]) -> None:
    for stage, required in REQUIRED_PLACEHOLDERS.items():
        if stage not in templates:
            raise TemplateError(f"missing template for stage {stage!r}")
        body = templates[stage]
        missing = [ph for ph in sorted(required) if ("{%s}" % ph) not in body]
        if missing:
            raise TemplateError(
                f"template {stage!r} lacks required placeholders: {', '.join(missing)}"
            )


def load_templates(override_path: str | Path | None = None) -> dict[str, str]:
    """Defaults merged with an optional JSON override file, then validated."""
    templates = dict(DEFAULT_TEMPLATES)
    if override_path is not None:
        with Path(override_path).open("r", encoding="utf-8") as fh:
            overrides = json.load(fh)
        unknown = set(overrides) - set(DEFAULT_TEMPLATES)
        if unknown:
            raise TemplateError(f"unknown template stages: {sorted(unknown)}")
        templates.update(overrides)
    validate_templates(templates)
    return templates


def render(templates: dict[str, str], stage: str, **values: str) -> str:
    body = templates[stage]
    for key, value in values.items():
        body = body.replace("{%s}" % key, value)
    return body
