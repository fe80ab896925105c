"""Human annotation: survey templates, batch construction, agreement stats.

Two built-in survey templates cover the toolkit's studies: ``validation``
(is a human-written follow-up valid / sensitive / related) and ``model_eval``
(five-question quality battery where questions 2-5 apply only to questions
judged valid). Model labels ride along on tasks for later analysis but are
never shown to annotators.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from statistics import mean, pvariance
from typing import Iterable, Sequence

from .. import statskernel
from ..corpus import Dataset, GenerationSet


class AnnotationError(ValueError):
    """Template, batch, or submission violations."""


class SubmissionError(AnnotationError):
    """Invalid response payload; carries the offending question key."""

    def __init__(self, message: str, field_key: str | None = None, code: str = "invalid"):
        super().__init__(message)
        self.field_key = field_key
        self.code = code


@dataclass(frozen=True)
class ScaleOption:
    label: str
    value: int


@dataclass(frozen=True)
class SurveyQuestion:
    key: str
    prompt: str
    options: tuple[ScaleOption, ...]
    conditional_on: tuple[str, int] | None = None

    def allowed_values(self) -> set[int]:
        return {o.value for o in self.options}


@dataclass(frozen=True)
class SurveyTemplate:
    template_id: str
    questions: tuple[SurveyQuestion, ...]

    def __post_init__(self):
        keys = [q.key for q in self.questions]
        if len(set(keys)) != len(keys):
            raise AnnotationError("duplicate question keys in template")
        for q in self.questions:
            if len({o.value for o in q.options}) != len(q.options):
                raise AnnotationError(f"duplicate option values for question {q.key!r}")
            if q.conditional_on is not None:
                dep_key, trigger = q.conditional_on
                dep = next((p for p in self.questions if p.key == dep_key), None)
                if dep is None:
                    raise AnnotationError(f"question {q.key!r} depends on unknown key {dep_key!r}")
                if dep.conditional_on is not None:
                    raise AnnotationError(f"conditions may not chain ({q.key!r} -> {dep_key!r})")
                if trigger not in dep.allowed_values():
                    raise AnnotationError(
                        f"question {q.key!r} triggers on impossible value {trigger}"
                    )

    def question(self, key: str) -> SurveyQuestion:
        for q in self.questions:
            if q.key == key:
                return q
        raise KeyError(key)

    def validate_answers(self, answers: dict[str, int]) -> None:
        """Scale membership plus conditional presence/absence rules."""
        known = {q.key for q in self.questions}
        for key in answers:
            if key not in known:
                raise SubmissionError(f"unknown question key {key!r}", key, "unknown_key")
        for q in self.questions:
            required = True
            if q.conditional_on is not None:
                dep_key, trigger = q.conditional_on
                dep_value = answers.get(dep_key)
                required = dep_value == trigger
            if required:
                if q.key not in answers:
                    raise SubmissionError(
                        f"missing answer for question {q.key!r}", q.key, "missing"
                    )
                if answers[q.key] not in q.allowed_values():
                    raise SubmissionError(
                        f"answer {answers[q.key]!r} not on the scale for {q.key!r}",
                        q.key,
                        "off_scale",
                    )
            elif q.key in answers:
                raise SubmissionError(
                    f"question {q.key!r} must be skipped when its condition does not hold",
                    q.key,
                    "forbidden",
                )


def _yes_no(yes_label: str = "Yes", no_label: str = "No") -> tuple[ScaleOption, ...]:
    return (ScaleOption(yes_label, 1), ScaleOption(no_label, 0))


VALIDATION_TEMPLATE = SurveyTemplate(
    template_id="validation",
    questions=(
        SurveyQuestion(
            key="validity",
            prompt="Is this a valid follow-up question for the conversation shown?",
            options=_yes_no(),
        ),
        SurveyQuestion(
            key="sensitivity",
            prompt="Does the question touch sensitive or unsafe subject matter?",
            options=_yes_no(),
        ),
        SurveyQuestion(
            key="relatedness",
            prompt="How related is the follow-up question to the conversation?",
            options=(
                ScaleOption("Strongly related", 3),
                ScaleOption("Related", 2),
                ScaleOption("Slightly related", 1),
                ScaleOption("Not related", 0),
            ),
        ),
    ),
)

MODEL_EVAL_TEMPLATE = SurveyTemplate(
    template_id="model_eval",
    questions=(
        SurveyQuestion(
            key="validity",
            prompt="Is this a valid follow-up question?",
            options=_yes_no(),
        ),
        SurveyQuestion(
            key="errors",
            prompt="Does the question contain factual or logical errors?",
            options=(ScaleOption("Contains errors", 1), ScaleOption("No errors", 0)),
            conditional_on=("validity", 1),
        ),
        SurveyQuestion(
            key="complexity",
            prompt="How much knowledge and reasoning does answering it take?",
            options=(
                ScaleOption("Complex", 3),
                ScaleOption("Moderate", 2),
                ScaleOption("Minimal", 1),
                ScaleOption("None", 0),
            ),
            conditional_on=("validity", 1),
        ),
        SurveyQuestion(
            key="relevance",
            prompt="How relevant is it to the conversation?",
            options=(
                ScaleOption("Strongly relevant", 3),
                ScaleOption("Relevant", 2),
                ScaleOption("Slightly relevant", 1),
                ScaleOption("Not relevant", 0),
            ),
            conditional_on=("validity", 1),
        ),
        SurveyQuestion(
            key="informativeness",
            prompt="How much new information would the answer add to the conversation?",
            options=(
                ScaleOption("A lot", 3),
                ScaleOption("Some", 2),
                ScaleOption("Little", 1),
                ScaleOption("None", 0),
            ),
            conditional_on=("validity", 1),
        ),
    ),
)

TEMPLATES: dict[str, SurveyTemplate] = {
    t.template_id: t for t in (VALIDATION_TEMPLATE, MODEL_EVAL_TEMPLATE)
}


@dataclass(frozen=True)
class AnnotationTask:
    task_id: str
    exchange_id: str
    iq: str
    ia: str
    fq: str
    model_label: str  # hidden from annotators
    template_id: str
    required_annotators: int = 3

    def public_dict(self) -> dict:
        """Payload for annotators: everything except the model label."""
        return {
            "task_id": self.task_id,
            "exchange_id": self.exchange_id,
            "iq": self.iq,
            "ia": self.ia,
            "fq": self.fq,
            "template_id": self.template_id,
        }


@dataclass(frozen=True)
class AnnotationResponse:
    task_id: str
    annotator_id: str
    answers: dict
    elapsed_seconds: float = 0.0


def create_batch(
    data: Dataset | Sequence[GenerationSet],
    sample_size: int,
    seed: int,
    template_id: str,
    exchanges: Dataset | None = None,
    required_annotators: int = 3,
) -> list[AnnotationTask]:
    """Sample exchanges without replacement and build one task per question.

    Triplet datasets label tasks by source; generation sets label by model
    and need an exchanges dataset for the question/answer text. Deterministic
    for a given seed: the exchange pool is sorted before sampling and the
    final task order is a seeded shuffle.
    """
    if template_id not in TEMPLATES:
        raise AnnotationError(f"unknown template {template_id!r}")
    if required_annotators < 1:
        raise AnnotationError("required_annotators must be >= 1")

    units: list[tuple[str, str, str, str, str]] = []  # (exchange, iq, ia, fq, label)
    if isinstance(data, Dataset):
        if data.schema != "triplets":
            raise AnnotationError("create_batch expects triplets or generation sets")
        for t in data.records:
            units.append((t.exchange_id, t.iq, t.ia, t.fq, t.source))
    else:
        if exchanges is None:
            raise AnnotationError("generation sets need an exchanges dataset for text")
        pair = exchanges.pair_map()
        for gen in data:
            if gen.exchange_id not in pair:
                raise AnnotationError(f"dangling exchange_id {gen.exchange_id!r}")
            iq, ia = pair[gen.exchange_id]
            for fq in gen.fqs:
                units.append((gen.exchange_id, iq, ia, fq, gen.model))

    pool = sorted({u[0] for u in units})
    if sample_size > len(pool):
        raise AnnotationError(
            f"sample_size {sample_size} exceeds the {len(pool)} available exchanges"
        )
    rng = random.Random(seed)
    chosen = set(rng.sample(pool, sample_size))
    sampled = [u for u in units if u[0] in chosen]
    rng.shuffle(sampled)
    return [
        AnnotationTask(
            task_id=f"t{i:04d}",
            exchange_id=ex,
            iq=iq,
            ia=ia,
            fq=fq,
            model_label=label,
            template_id=template_id,
            required_annotators=required_annotators,
        )
        for i, (ex, iq, ia, fq, label) in enumerate(sampled, start=1)
    ]


# ---------------------------------------------------------------------------
# Agreement and summaries
# ---------------------------------------------------------------------------


def cohen_kappa(a: Sequence, b: Sequence) -> float:
    """Cohen's kappa between two equal-length label sequences.

    Chance agreement comes from the marginal label distributions. Perfect
    chance agreement (both raters constant and equal) is 1.0 by convention.
    """
    if len(a) != len(b):
        raise ValueError("label sequences must have equal length")
    if not a:
        raise ValueError("label sequences must be nonempty")
    n = len(a)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    labels = set(a) | set(b)
    count_a = {lab: 0 for lab in labels}
    count_b = {lab: 0 for lab in labels}
    for x in a:
        count_a[x] += 1
    for y in b:
        count_b[y] += 1
    p_e = sum((count_a[lab] / n) * (count_b[lab] / n) for lab in labels)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def agreement_report(
    tasks: Sequence[AnnotationTask],
    responses: Sequence[AnnotationResponse],
    template: SurveyTemplate,
) -> dict:
    """Pairwise Cohen's kappa per question key, averaged over annotator pairs.

    Pairs are restricted to tasks both annotators answered where both supplied
    the key (conditional questions shrink the overlap). Raises when the batch
    is incomplete or no two annotators share a task.
    """
    by_task: dict[str, dict[str, AnnotationResponse]] = {}
    for r in responses:
        by_task.setdefault(r.task_id, {})[r.annotator_id] = r
    incomplete = [
        t.task_id for t in tasks if len(by_task.get(t.task_id, {})) < t.required_annotators
    ]
    if incomplete:
        raise AnnotationError(
            f"batch incomplete: tasks missing responses: {', '.join(sorted(incomplete))}"
        )
    annotators = sorted({r.annotator_id for r in responses})
    if len(annotators) < 2:
        raise AnnotationError("agreement needs at least two annotators")

    task_order = [t.task_id for t in tasks]
    pair_overlap = False
    report: dict = {"annotators": annotators, "questions": {}}
    for q in template.questions:
        pair_values: dict[str, float] = {}
        for i in range(len(annotators)):
            for j in range(i + 1, len(annotators)):
                a_id, b_id = annotators[i], annotators[j]
                a_labels, b_labels = [], []
                for task_id in task_order:
                    recs = by_task.get(task_id, {})
                    if a_id in recs and b_id in recs:
                        if q.key in recs[a_id].answers and q.key in recs[b_id].answers:
                            a_labels.append(recs[a_id].answers[q.key])
                            b_labels.append(recs[b_id].answers[q.key])
                if a_labels:
                    pair_overlap = True
                    pair_values[f"{a_id}|{b_id}"] = cohen_kappa(a_labels, b_labels)
        mean_kappa = (
            sum(pair_values.values()) / len(pair_values) if pair_values else None
        )
        report["questions"][q.key] = {"pairs": pair_values, "mean_kappa": mean_kappa}
    if not pair_overlap:
        raise AnnotationError("fewer than 2 annotators overlap on any task")
    return report


def aspect_summary(
    tasks: Sequence[AnnotationTask],
    responses: Sequence[AnnotationResponse],
    template: SurveyTemplate,
) -> dict:
    """Mean and population variance per question key, grouped by model label.

    Responses that mark a question invalid contribute their validity answer
    and nothing else; conditional aspects average only over responses where
    the condition held.
    """
    label_by_task = {t.task_id: t.model_label for t in tasks}
    values: dict[str, dict[str, list[int]]] = {}
    for r in responses:
        label = label_by_task.get(r.task_id)
        if label is None:
            raise AnnotationError(f"response for unknown task {r.task_id!r}")
        for key, value in r.answers.items():
            values.setdefault(label, {}).setdefault(key, []).append(value)
    out: dict = {}
    for label in sorted(values):
        out[label] = {}
        for q in template.questions:
            xs = values[label].get(q.key, [])
            if xs:
                out[label][q.key] = {
                    "mean": mean(xs),
                    "variance": pvariance(xs),
                    "n": len(xs),
                }
            else:
                out[label][q.key] = {"mean": None, "variance": None, "n": 0}
    return out


@dataclass(frozen=True)
class AnovaResult:
    f_statistic: float
    p_value: float
    df_between: int
    df_within: int


def one_way_anova(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """Classical one-way ANOVA: F = MS_between / MS_within.

    The p-value shares the incomplete-beta kernel with the t-tests. Zero
    within-group variance yields F = 0 (all groups identical) or infinity.
    """
    if len(groups) < 2:
        raise ValueError("one_way_anova needs at least two groups")
    for g in groups:
        if len(g) < 2:
            raise ValueError("every group needs at least two observations")
    all_values = [x for g in groups for x in g]
    n_total = len(all_values)
    grand = mean(all_values)
    group_means = [mean(g) for g in groups]
    ss_between = sum(len(g) * (m - grand) ** 2 for g, m in zip(groups, group_means))
    ss_within = sum(sum((x - m) ** 2 for x in g) for g, m in zip(groups, group_means))
    df_between = len(groups) - 1
    df_within = n_total - len(groups)
    if ss_within == 0.0:
        if ss_between == 0.0:
            return AnovaResult(0.0, 1.0, df_between, df_within)
        return AnovaResult(float("inf"), 0.0, df_between, df_within)
    f_stat = (ss_between / df_between) / (ss_within / df_within)
    return AnovaResult(
        f_stat, statskernel.f_sf(f_stat, df_between, df_within), df_between, df_within
    )
