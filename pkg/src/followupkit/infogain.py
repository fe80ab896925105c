"""Model-judged informativeness and the significance tests over its outputs.

A follow-up question is informative when the comprehensive answer can answer
it but the initial answer cannot. Both checks run through one fixed yes/no
judge prompt; replies are parsed from the leading token, tolerating case and
trailing punctuation, with a single cache-bypassing retry before giving up.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from statistics import mean
from typing import Sequence

from . import prompts, statskernel
from .gateway import Gateway

_LEAD_TOKEN_RE = re.compile(r"[A-Za-z]+")


class JudgeError(RuntimeError):
    """The judge reply could not be parsed as YES or NO after a retry."""


class MissingComprehensiveAnswer(KeyError):
    """A generation set has no stored comprehensive answer."""


@dataclass(frozen=True)
class InformativenessVerdict:
    exchange_id: str
    fq: str
    ia_answerable: bool
    ca_answerable: bool
    informative: bool

    def to_dict(self) -> dict:
        return {
            "exchange_id": self.exchange_id,
            "fq": self.fq,
            "ia_answerable": self.ia_answerable,
            "ca_answerable": self.ca_answerable,
            "informative": self.informative,
        }


def parse_yes_no(reply: str) -> bool | None:
    """Leading alphabetic token, case-insensitive; None when unparseable."""
    match = _LEAD_TOKEN_RE.search(reply.strip())
    if not match:
        return None
    token = match.group(0).lower()
    if token == "yes":
        return True
    if token == "no":
        return False
    return None


def judge_answerability(
    question: str,
    context: str,
    gw: Gateway,
    templates: dict[str, str] | None = None,
) -> bool:
    """Ask the judge whether ``context`` fully answers ``question``.

    Identical (question, context) pairs hit the gateway cache. A reply that
    is neither YES nor NO is retried once with the cache bypassed, then
    raises JudgeError.
    """
    templates = templates or prompts.DEFAULT_TEMPLATES
    body = prompts.render(templates, "judge_answerable", QUESTION=question, CONTEXT=context)
    messages = [("user", body)]
    response, _ = gw.chat(messages)
    verdict = parse_yes_no(response.content) if not response.refused else None
    if verdict is None:
        response, _ = gw.chat(messages, use_cache=False)
        verdict = parse_yes_no(response.content) if not response.refused else None
    if verdict is None:
        raise JudgeError(
            f"judge reply not parseable as YES/NO for question {question[:60]!r}: "
            f"{response.content[:80]!r}"
        )
    return verdict


def judge_grounded(
    fq: str,
    iq: str,
    ia: str,
    gw: Gateway,
    templates: dict[str, str] | None = None,
) -> bool:
    """Single grounding judge: passes if the question leans on IQ or IA wording."""
    templates = templates or prompts.DEFAULT_TEMPLATES
    body = prompts.render(templates, "judge_grounded", FQ=fq, IQ=iq, IA=ia)
    messages = [("user", body)]
    response, _ = gw.chat(messages)
    verdict = parse_yes_no(response.content) if not response.refused else None
    if verdict is None:
        response, _ = gw.chat(messages, use_cache=False)
        verdict = parse_yes_no(response.content) if not response.refused else None
    if verdict is None:
        raise JudgeError(f"grounding judge reply not parseable for {fq[:60]!r}")
    return verdict


def informativeness(
    exchange_id: str,
    fq: str,
    ia: str,
    ca: str,
    gw: Gateway,
    templates: dict[str, str] | None = None,
) -> InformativenessVerdict:
    """Two judge calls; informative iff CA answers the question and IA does not."""
    ca_ok = judge_answerability(fq, ca, gw, templates)
    ia_ok = judge_answerability(fq, ia, gw, templates)
    return InformativenessVerdict(
        exchange_id=exchange_id,
        fq=fq,
        ia_answerable=ia_ok,
        ca_answerable=ca_ok,
        informative=ca_ok and not ia_ok,
    )


def judge_generation_sets(
    generation_sets,
    pair_map: dict[str, tuple[str, str]],
    ca_by_exchange: dict[str, str],
    gw: Gateway,
    templates: dict[str, str] | None = None,
) -> list[InformativenessVerdict]:
    """Informativeness verdicts for every question of every generation set."""
    verdicts: list[InformativenessVerdict] = []
    for gen in generation_sets:
        if gen.exchange_id not in pair_map:
            raise KeyError(f"no exchange text for generation set {gen.exchange_id!r}")
        if gen.exchange_id not in ca_by_exchange:
            raise MissingComprehensiveAnswer(
                f"no comprehensive answer stored for exchange {gen.exchange_id!r}"
            )
        _, ia = pair_map[gen.exchange_id]
        ca = ca_by_exchange[gen.exchange_id]
        for fq in gen.fqs:
            verdicts.append(informativeness(gen.exchange_id, fq, ia, ca, gw, templates))
    return verdicts


def informative_rate(verdicts: Sequence[InformativenessVerdict]) -> float:
    """Percentage of informative verdicts, two decimal places."""
    if not verdicts:
        raise ValueError("informative_rate needs at least one verdict")
    count = sum(1 for v in verdicts if v.informative)
    return round(100.0 * count / len(verdicts), 2)


# ---------------------------------------------------------------------------
# Significance tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    p_value: float
    df: float


def _sample_var(xs: Sequence[float], m: float) -> float:
    return sum((x - m) ** 2 for x in xs) / (len(xs) - 1)


def welch_t_test(a: Sequence[float], b: Sequence[float], equal_var: bool = False) -> TTestResult:
    """Two-sample t-test, Welch by default; two-tailed p-value.

    equal_var=True switches to the pooled-variance Student variant
    (df = n_a + n_b - 2), whose square is the one-way ANOVA F on two groups.
    """
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two observations")
    ma, mb = mean(a), mean(b)
    va, vb = _sample_var(a, ma), _sample_var(b, mb)
    na, nb = len(a), len(b)
    if equal_var:
        df = float(na + nb - 2)
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    else:
        sa, sb = va / na, vb / nb
        se = math.sqrt(sa + sb)
        if se > 0.0:
            df = (sa + sb) ** 2 / (sa**2 / (na - 1) + sb**2 / (nb - 1))
        else:
            df = float(na + nb - 2)
    if se == 0.0:
        if ma == mb:
            return TTestResult(0.0, 1.0, df)
        t = math.inf if ma > mb else -math.inf
        return TTestResult(t, 0.0, df)
    t = (ma - mb) / se
    return TTestResult(t, statskernel.t_sf_two_sided(t, df), df)


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """Cohen's d with the (n-1)-weighted pooled standard deviation.

    Zero pooled variance with equal means is defined as 0; with unequal means
    the effect size is undefined and raises.
    """
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two observations")
    ma, mb = mean(a), mean(b)
    va, vb = _sample_var(a, ma), _sample_var(b, mb)
    pooled = ((len(a) - 1) * va + (len(b) - 1) * vb) / (len(a) + len(b) - 2)
    if pooled == 0.0:
        if ma == mb:
            return 0.0
        raise ValueError("effect size undefined: zero pooled variance with unequal means")
    return (ma - mb) / math.sqrt(pooled)


@dataclass(frozen=True)
class SignificanceReport:
    n_a: int
    n_b: int
    mean_a: float
    mean_b: float
    t_statistic: float
    p_value: float
    df: float
    cohens_d: float

    def to_dict(self) -> dict:
        return {
            "n_a": self.n_a,
            "n_b": self.n_b,
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
            "df": self.df,
            "cohens_d": self.cohens_d,
        }


def significance_report(a: Sequence[float], b: Sequence[float], equal_var: bool = False) -> SignificanceReport:
    test = welch_t_test(a, b, equal_var=equal_var)
    return SignificanceReport(
        n_a=len(a),
        n_b=len(b),
        mean_a=mean(a),
        mean_b=mean(b),
        t_statistic=test.statistic,
        p_value=test.p_value,
        df=test.df,
        cohens_d=cohens_d(a, b),
    )
