"""Diversity and reference-based metrics over generated follow-up questions.

All text metrics share one tokenizer: lowercase, whitespace split, with
punctuation marks as separate tokens. Scores are raw ratios here; percentage
scaling and rounding happen at the report layer so equivalence against
brute-force oracles stays exact.

Implemented:

* distinct_n        unique n-grams / total n-grams over a generation set
* cluster_diversity agglomerative average-linkage cluster count per question
* length_stats      token-length mean/min/max/population stddev
* bleu_n            sentence BLEU with brevity penalty and additive smoothing
* rouge_l           LCS F1 (beta = 1)
* meteor_lite       exact+stem unigram alignment, chunk fragmentation penalty
* embed_cosine      cosine of sentence embeddings
* best_vs_reference max metric value of a generation set against a reference
* evaluate          per-model macro-averaged report over (exchange, model)
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from statistics import pstdev
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import Dataset, GenerationSet

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]", re.UNICODE)

Embedder = Callable[[Sequence[str]], Sequence[Sequence[float]]]


def tokenize(text: str) -> list[str]:
    """Lowercase tokens; punctuation split off as separate tokens.

    "What is a heuristic?" -> ["what", "is", "a", "heuristic", "?"]
    """
    return _TOKEN_RE.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


# ---------------------------------------------------------------------------
# Diversity
# ---------------------------------------------------------------------------


def distinct_n(fqs: Sequence[str], n: int) -> float:
    """Distinct n-gram ratio across a generation set, in [0, 1].

    N-grams never cross question boundaries. A set whose every question has
    fewer than n tokens has no n-grams at all; that returns 0.0 with a
    warning rather than dividing by zero.
    """
    if not fqs:
        raise ValueError("distinct_n needs a nonempty generation set")
    if n < 1:
        raise ValueError("n must be >= 1")
    unique: set[tuple[str, ...]] = set()
    total = 0
    for fq in fqs:
        grams = _ngrams(tokenize(fq), n)
        total += len(grams)
        unique.update(grams)
    if total == 0:
        logger.warning("distinct_%d undefined: every question has fewer than %d tokens", n, n)
        return 0.0
    return len(unique) / total


def _unit_rows(vectors: Sequence[Sequence[float]]) -> np.ndarray:
    arr = np.asarray(
        [list(getattr(v, "values", v)) for v in vectors], dtype=float
    )
    if arr.ndim != 2:
        raise ValueError("embedder must return one vector per text")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero embedding vector")
    return arr / norms[:, None]


def cluster_diversity(fqs: Sequence[str], embedder: Embedder, merge_threshold: float = 1.0) -> float:
    """Clusters per question under average-linkage agglomerative clustering.

    Embeddings are L2-normalized; inter-cluster distance is the mean pairwise
    Euclidean distance between members. Merging continues while the minimum
    inter-cluster distance is <= merge_threshold and stops once it exceeds
    it. Returns n_clusters / n_questions, in (0, 1].
    """
    if not fqs:
        raise ValueError("cluster_diversity needs a nonempty generation set")
    points = _unit_rows(embedder(list(fqs)))
    n = len(points)
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))

    clusters: list[list[int]] = [[i] for i in range(n)]
    while len(clusters) > 1:
        best = None
        best_d = math.inf
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d = float(np.mean(dist[np.ix_(clusters[a], clusters[b])]))
                if d < best_d:
                    best_d = d
                    best = (a, b)
        if best is None or best_d > merge_threshold:
            break
        a, b = best
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    return len(clusters) / n


@dataclass(frozen=True)
class LengthStats:
    mean: float
    shortest: int
    longest: int
    stddev: float


def length_stats(fqs: Sequence[str]) -> LengthStats:
    """Token-length statistics; stddev is the population standard deviation."""
    if not fqs:
        raise ValueError("length_stats needs a nonempty generation set")
    lengths = [len(tokenize(fq)) for fq in fqs]
    return LengthStats(
        mean=sum(lengths) / len(lengths),
        shortest=min(lengths),
        longest=max(lengths),
        stddev=pstdev(lengths),
    )


# ---------------------------------------------------------------------------
# Reference-based metrics
# ---------------------------------------------------------------------------


def bleu_n(candidate: str, reference: str, n: int = 4) -> float:
    """Sentence BLEU-n with brevity penalty and additive smoothing.

    Geometric mean of modified k-gram precisions for k = 1..n. A zero
    precision is replaced by 1 / (2 * candidate k-gram count). Orders where
    neither side has any k-gram are skipped (so identical short strings still
    score 1); orders where only the candidate lacks k-grams clamp the count
    to 1. Brevity penalty: exp(1 - r/c) when the candidate is shorter than
    the reference.
    """
    if not candidate.strip() or not reference.strip():
        raise ValueError("bleu_n needs nonempty candidate and reference")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    log_sum = 0.0
    orders = 0
    for k in range(1, n + 1):
        cand_grams = Counter(_ngrams(cand, k))
        ref_grams = Counter(_ngrams(ref, k))
        total = sum(cand_grams.values())
        if total == 0 and not ref_grams:
            continue
        clipped = sum(min(count, ref_grams[g]) for g, count in cand_grams.items())
        if clipped > 0:
            precision = clipped / total
        else:
            precision = 1.0 / (2.0 * max(total, 1))
        log_sum += math.log(precision)
        orders += 1
    if orders == 0:
        return 0.0
    geo = math.exp(log_sum / orders)
    c, r = len(cand), len(ref)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * geo


def rouge_l(candidate: str, reference: str) -> float:
    """ROUGE-L: F1 (beta = 1) over the longest common token subsequence."""
    if not candidate.strip() or not reference.strip():
        raise ValueError("rouge_l needs nonempty candidate and reference")
    a = tokenize(candidate)
    b = tokenize(reference)
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    lcs = prev[len(b)]
    if lcs == 0:
        return 0.0
    p = lcs / len(a)
    r = lcs / len(b)
    return 2.0 * p * r / (p + r)


def stem(token: str) -> str:
    """Fixed suffix-stripping rules shared by both sides of the alignment.

    First matching rule applies, once: -sses -> -ss; -ies -> -i (length >= 5);
    -ing dropped (length >= 6); -ed dropped (length >= 5); final -s dropped
    (length >= 4, not -ss). Anything else is returned unchanged.
    """
    if token.endswith("sses"):
        return token[:-2]
    if token.endswith("ies") and len(token) >= 5:
        return token[:-3] + "i"
    if token.endswith("ing") and len(token) >= 6:
        return token[:-3]
    if token.endswith("ed") and len(token) >= 5:
        return token[:-2]
    if token.endswith("ss"):
        return token
    if token.endswith("s") and len(token) >= 4:
        return token[:-1]
    return token


class _AlignmentBudgetExceeded(Exception):
    pass


def _best_alignment(cand: list[str], ref: list[str], node_budget: int = 500_000) -> tuple[int, int]:
    """(max matches, min chunks) over injective unigram matchings.

    A candidate token may align to a reference token when they are equal or
    share a stem. Exact branch-and-bound; falls back to a greedy left-to-right
    alignment if the node budget is exhausted (long, highly repetitive input).
    """
    cand_stems = [stem(t) for t in cand]
    ref_stems = [stem(t) for t in ref]
    compat: list[list[int]] = []
    for i, (ct, cs) in enumerate(zip(cand, cand_stems)):
        row = [j for j, (rt, rs) in enumerate(zip(ref, ref_stems)) if ct == rt or cs == rs]
        compat.append(row)

    n = len(cand)
    # how many candidate positions at index >= i could possibly match
    suffix = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + (1 if compat[i] else 0)

    best_matches = 0
    best_chunks = 0
    nodes = 0

    def dfs(i: int, used: int, matches: int, chunks: int, last_i: int, last_j: int) -> None:
        nonlocal best_matches, best_chunks, nodes
        nodes += 1
        if nodes > node_budget:
            raise _AlignmentBudgetExceeded
        ceiling = matches + suffix[i]
        if ceiling < best_matches:
            return
        if ceiling == best_matches and best_matches > 0 and chunks >= best_chunks:
            return
        if i == n:
            if matches > best_matches or (matches == best_matches and (best_matches == 0 or chunks < best_chunks)):
                best_matches = matches
                best_chunks = chunks
            return
        for j in compat[i]:
            if used & (1 << j):
                continue
            grew = 0 if (last_i == i - 1 and last_j == j - 1) else 1
            dfs(i + 1, used | (1 << j), matches + 1, chunks + grew, i, j)
        dfs(i + 1, used, matches, chunks, last_i, last_j)

    try:
        dfs(0, 0, 0, 0, -2, -2)
        return best_matches, best_chunks
    except _AlignmentBudgetExceeded:
        logger.warning("alignment budget exceeded (%d tokens); using greedy fallback", n)
        used_refs: set[int] = set()
        pairs: list[tuple[int, int]] = []
        for i in range(n):
            for j in compat[i]:
                if j not in used_refs:
                    used_refs.add(j)
                    pairs.append((i, j))
                    break
        chunks = 0
        for k, (i, j) in enumerate(pairs):
            if k == 0 or not (pairs[k - 1][0] == i - 1 and pairs[k - 1][1] == j - 1):
                chunks += 1
        return len(pairs), chunks


def meteor_lite(candidate: str, reference: str) -> float:
    """METEOR restricted to exact and stem matching (no synonym stage).

    Unigram alignment maximizes matches, then minimizes chunks. With m
    matches over candidate length c and reference length r:

        P = m/c,  R = m/r,  F = 10PR / (R + 9P)
        penalty = 0.5 * (chunks / m)^3
        score = F * (1 - penalty)

    Zero matches score 0.
    """
    if not candidate.strip() or not reference.strip():
        raise ValueError("meteor_lite needs nonempty candidate and reference")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    matches, chunks = _best_alignment(cand, ref)
    if matches == 0:
        return 0.0
    p = matches / len(cand)
    r = matches / len(ref)
    f_mean = 10.0 * p * r / (r + 9.0 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1.0 - penalty)


def embed_cosine(candidate: str, reference: str, embedder: Embedder) -> float:
    """Cosine similarity of the two sentence embeddings."""
    rows = _unit_rows(embedder([candidate, reference]))
    return float(np.dot(rows[0], rows[1]))


def best_vs_reference(fqs: Sequence[str], reference_fq: str, metric: Callable[[str, str], float]) -> float:
    """Best metric value any generated question achieves against the reference."""
    if not fqs:
        raise ValueError("best_vs_reference needs a nonempty generation set")
    return max(metric(fq, reference_fq) for fq in fqs)


# ---------------------------------------------------------------------------
# Evaluation over datasets
# ---------------------------------------------------------------------------


@dataclass
class DiversityReport:
    model: str
    distinct1: float  # percent
    distinct2: float  # percent
    clusters_per_fq: float  # ratio in (0, 1]
    length: LengthStats
    n_exchanges: int
    n_fqs: int


@dataclass
class ReferenceReport:
    model: str
    embed_sim: float  # percent, clamped to [0, 100]
    bleu: dict[int, float] = field(default_factory=dict)  # percent per order
    meteor: float = 0.0  # percent
    rouge_l: float = 0.0  # percent
    n_exchanges: int = 0


@dataclass
class EvalResult:
    diversity: dict[str, DiversityReport]
    reference: dict[str, ReferenceReport]
    per_exchange: list[dict]
    skipped: list[dict]


def evaluate(
    generation_sets: Iterable[GenerationSet],
    references: Dataset,
    embedder: Embedder,
    bleu_orders: Sequence[int] = (1, 2, 3, 4),
) -> EvalResult:
    """Macro-averaged per-model diversity and reference agreement.

    Diversity metrics are computed per (exchange, model) generation set and
    averaged over exchanges; length statistics pool every question the model
    produced. Reference metrics take the best generated question per human
    reference, average within the exchange, then across exchanges. Exchanges
    with no reference questions are skipped and reported.
    """
    if references.schema != "triplets":
        raise ValueError("references must be a triplets dataset")
    refs_by_exchange: dict[str, list[str]] = {}
    for t in references.records:
        refs_by_exchange.setdefault(t.exchange_id, []).append(t.fq)

    per_model: dict[str, dict] = {}
    per_exchange_rows: list[dict] = []
    skipped: list[dict] = []

    for gen in generation_sets:
        refs = refs_by_exchange.get(gen.exchange_id)
        if not refs:
            skipped.append({"model": gen.model, "exchange_id": gen.exchange_id})
            logger.warning(
                "skipping exchange %s for model %s: no reference questions",
                gen.exchange_id,
                gen.model,
            )
            continue
        fqs = list(gen.fqs)
        d1 = distinct_n(fqs, 1)
        d2 = distinct_n(fqs, 2)
        clusters = cluster_diversity(fqs, embedder)

        # embed once per exchange: generated questions then references
        rows = _unit_rows(embedder(fqs + refs))
        gen_rows, ref_rows = rows[: len(fqs)], rows[len(fqs) :]
        sims = gen_rows @ ref_rows.T  # (n_fqs, n_refs)
        embed_best = float(np.mean(sims.max(axis=0)))

        bleu_best = {
            k: sum(best_vs_reference(fqs, ref, lambda c, r: bleu_n(c, r, k)) for ref in refs) / len(refs)
            for k in bleu_orders
        }
        meteor_best = sum(best_vs_reference(fqs, ref, meteor_lite) for ref in refs) / len(refs)
        rouge_best = sum(best_vs_reference(fqs, ref, rouge_l) for ref in refs) / len(refs)

        bucket = per_model.setdefault(
            gen.model,
            {
                "d1": [], "d2": [], "clusters": [], "lengths": [],
                "embed": [], "bleu": {k: [] for k in bleu_orders},
                "meteor": [], "rouge": [],
            },
        )
        bucket["d1"].append(d1)
        bucket["d2"].append(d2)
        bucket["clusters"].append(clusters)
        bucket["lengths"].extend(len(tokenize(fq)) for fq in fqs)
        bucket["embed"].append(embed_best)
        for k in bleu_orders:
            bucket["bleu"][k].append(bleu_best[k])
        bucket["meteor"].append(meteor_best)
        bucket["rouge"].append(rouge_best)

        per_exchange_rows.append(
            {
                "model": gen.model,
                "exchange_id": gen.exchange_id,
                "n_fqs": len(fqs),
                "distinct1": d1,
                "distinct2": d2,
                "clusters_per_fq": clusters,
                "embed_sim": embed_best,
                **{f"bleu{k}": bleu_best[k] for k in bleu_orders},
                "meteor": meteor_best,
                "rouge_l": rouge_best,
            }
        )

    diversity: dict[str, DiversityReport] = {}
    reference: dict[str, ReferenceReport] = {}
    for model, b in sorted(per_model.items()):
        n_ex = len(b["d1"])
        lengths = b["lengths"]
        diversity[model] = DiversityReport(
            model=model,
            distinct1=100.0 * sum(b["d1"]) / n_ex,
            distinct2=100.0 * sum(b["d2"]) / n_ex,
            clusters_per_fq=sum(b["clusters"]) / n_ex,
            length=LengthStats(
                mean=sum(lengths) / len(lengths),
                shortest=min(lengths),
                longest=max(lengths),
                stddev=pstdev(lengths),
            ),
            n_exchanges=n_ex,
            n_fqs=len(lengths),
        )
        reference[model] = ReferenceReport(
            model=model,
            embed_sim=_pct_clamped(sum(b["embed"]) / n_ex),
            bleu={k: 100.0 * sum(v) / n_ex for k, v in b["bleu"].items()},
            meteor=100.0 * sum(b["meteor"]) / n_ex,
            rouge_l=100.0 * sum(b["rouge"]) / n_ex,
            n_exchanges=n_ex,
        )
    return EvalResult(diversity, reference, per_exchange_rows, skipped)


def _pct_clamped(ratio: float) -> float:
    return min(100.0, max(0.0, 100.0 * ratio))
