"""Offline evaluation: ranking metrics, citation match, judged answer quality,
no-answer/feedback rates, and question mining from query logs."""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import date
from typing import Protocol

from .answer import AnswerEnvelope
from .index import SearchHit, tokenize

logger = logging.getLogger(__name__)

WH_WORDS = {"who", "what", "when", "where", "why", "which", "how"}


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class QrelEntry:
    """Binary (single relevant_ref) or graded (ref -> grade in {0,1,2}) relevance."""

    query_id: str
    relevant_ref: tuple[str, int] | None = None
    grades: dict[tuple[str, int], int] | None = None

    def __post_init__(self):
        if (self.relevant_ref is None) == (self.grades is None):
            raise EvalError("exactly one of relevant_ref / grades must be set")
        if self.grades is not None and any(g not in (0, 1, 2) for g in self.grades.values()):
            raise EvalError("grades must be in {0, 1, 2}")

    def grade_of(self, ref: tuple[str, int]) -> int:
        if self.relevant_ref is not None:
            return 2 if ref == self.relevant_ref else 0
        return self.grades.get(ref, 0)


def reciprocal_rank(hits: list[SearchHit], qrel: QrelEntry) -> float:
    """1/rank of the first fully relevant hit (binary match or grade 2)."""
    for hit in hits:
        if qrel.grade_of(hit.chunk_ref) == 2:
            return 1.0 / hit.rank
    return 0.0


def recall_at_k(hits: list[SearchHit], qrel: QrelEntry, k: int = 3) -> int:
    if k < 1:
        raise EvalError("k must be >= 1")
    return int(any(qrel.grade_of(h.chunk_ref) == 2 for h in hits if h.rank <= k))


def ndcg(hits: list[SearchHit], qrel: QrelEntry, k: int | None = None) -> float:
    """Gain 2^grade - 1, discount log2(rank + 1), normalized by the ideal
    ordering of the full grade pool; 0 when the pool holds no gain."""
    if k is None:
        k = len(hits)
    dcg = sum(
        (2 ** qrel.grade_of(h.chunk_ref) - 1) / math.log2(h.rank + 1)
        for h in hits
        if h.rank <= k
    )
    if qrel.relevant_ref is not None:
        pool = [2]
    else:
        pool = sorted(qrel.grades.values(), reverse=True)
    idcg = sum((2**g - 1) / math.log2(i + 2) for i, g in enumerate(pool[:k]))
    return dcg / idcg if idcg > 0 else 0.0


def citation_match_rate(
    envelopes: list[AnswerEnvelope],
    qrels: list[QrelEntry],
    granularity: str = "document",
) -> float:
    """Fraction of queries where some cited chunk matches the gold citation.

    Document granularity compares origin_id only; chunk granularity requires
    the exact (origin_id, local_id).
    """
    if len(envelopes) != len(qrels):
        raise EvalError("envelopes and qrels must align")
    if not envelopes:
        return 0.0
    matches = 0
    for env, qrel in zip(envelopes, qrels):
        if qrel.relevant_ref is None:
            raise EvalError("citation match needs binary qrels")
        gold = qrel.relevant_ref
        for ref in env.citations:
            if ref == gold or (granularity == "document" and ref[0] == gold[0]):
                matches += 1
                break
    return matches / len(envelopes)


class JudgeClient(Protocol):
    name: str

    def judge(self, question: str, system_answer: str, reference_answer: str) -> int: ...


class MockJudge:
    """Deterministic grader: 2 when the system answer covers the reference's
    key tokens, 0 when their token sets are disjoint, 1 otherwise."""

    name = "mock-judge"

    def __init__(self, coverage_threshold: float = 0.8):
        self.coverage_threshold = coverage_threshold

    def judge(self, question: str, system_answer: str, reference_answer: str) -> int:
        ref_tokens = set(tokenize(reference_answer))
        sys_tokens = set(tokenize(system_answer))
        if not ref_tokens or not sys_tokens or not (ref_tokens & sys_tokens):
            return 0
        coverage = len(ref_tokens & sys_tokens) / len(ref_tokens)
        return 2 if coverage >= self.coverage_threshold else 1


def answer_quality(
    envelopes: list[AnswerEnvelope],
    references: list[str],
    judge: JudgeClient,
    question_texts: list[str] | None = None,
) -> float:
    """Mean judge grade; a no-answer envelope counts as grade 0. Judge failures
    exclude the query from the mean (logged with a count)."""
    if len(envelopes) != len(references):
        raise EvalError("envelopes and references must align")
    if not envelopes:
        return 0.0
    questions = question_texts or [""] * len(envelopes)
    grades = []
    failures = 0
    for env, ref, q in zip(envelopes, references, questions):
        if env.no_answer:
            grades.append(0)
            continue
        try:
            grades.append(int(judge.judge(q, env.answer_text, ref)))
        except Exception:
            failures += 1
    if failures:
        logger.warning("judge failed on %d queries; excluded from the mean", failures)
    return sum(grades) / len(grades) if grades else 0.0


def no_answer_rate(envelopes: list[AnswerEnvelope]) -> float:
    if not envelopes:
        raise EvalError("no envelopes")
    return sum(1 for e in envelopes if e.no_answer) / len(envelopes)


@dataclass(frozen=True)
class FeedbackEvent:
    agent_id: str
    day: date
    variant: str
    thumbs: str  # "up" | "down"
    query_id: str

    def __post_init__(self):
        if self.thumbs not in ("up", "down"):
            raise EvalError(f"thumbs must be up|down, got {self.thumbs!r}")


def positive_feedback_rate(events: list[FeedbackEvent]) -> float | None:
    """Thumbs-up share among queries that received feedback; None when there is
    no feedback at all (undefined, not zero)."""
    if not events:
        return None
    return sum(1 for e in events if e.thumbs == "up") / len(events)


def mine_questions(query_log: list[str]) -> list[str]:
    """Keep queries that start with a WH-word or end with a question mark."""
    kept = []
    for q in query_log:
        stripped = q.strip()
        if not stripped:
            continue
        first = re.split(r"\s+", stripped)[0].lower().strip("?!.,;:")
        if first in WH_WORDS or stripped.rstrip().endswith("?"):
            kept.append(q)
    return kept


@dataclass
class EvalReport:
    mrr: float
    recall_at_3: float
    ndcg: float
    answer_quality: float | None
    citation_match_rate: float | None
    no_answer_rate: float | None
    n_queries: int
    rows: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "mrr": self.mrr,
            "recall_at_3": self.recall_at_3,
            "ndcg": self.ndcg,
            "answer_quality": self.answer_quality,
            "citation_match_rate": self.citation_match_rate,
            "no_answer_rate": self.no_answer_rate,
            "n_queries": self.n_queries,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"summary": self.summary()}) + "\n")
            for row in self.rows:
                fh.write(json.dumps(row) + "\n")


def evaluate_ranking(
    runs: list[tuple[str, list[SearchHit]]],
    qrels_by_id: dict[str, QrelEntry],
    k: int = 3,
) -> EvalReport:
    """Aggregate MRR / Recall@k / NDCG over (query_id, hits) runs."""
    if not runs:
        raise EvalError("no runs to evaluate")
    rows = []
    for query_id, hits in runs:
        qrel = qrels_by_id[query_id]
        rows.append(
            {
                "query_id": query_id,
                "rr": reciprocal_rank(hits, qrel),
                "recall": recall_at_k(hits, qrel, k),
                "ndcg": ndcg(hits, qrel),
            }
        )
    n = len(rows)
    return EvalReport(
        mrr=sum(r["rr"] for r in rows) / n,
        recall_at_3=sum(r["recall"] for r in rows) / n,
        ndcg=sum(r["ndcg"] for r in rows) / n,
        answer_quality=None,
        citation_match_rate=None,
        no_answer_rate=None,
        n_queries=n,
        rows=rows,
    )


def load_qrels(path) -> dict[str, QrelEntry]:
    """Line-delimited qrels: {"query_id", "origin_id", "local_id", "grade"?}.

    Lines without a grade form a binary entry; graded lines accumulate into a
    graded entry per query_id.
    """
    binary: dict[str, tuple[str, int]] = {}
    graded: dict[str, dict[tuple[str, int], int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                qid = rec["query_id"]
                ref = (rec["origin_id"], int(rec["local_id"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvalError(f"malformed qrel line {lineno}: {exc}") from exc
            if "grade" in rec:
                graded.setdefault(qid, {})[ref] = int(rec["grade"])
            else:
                binary[qid] = ref
    out: dict[str, QrelEntry] = {}
    for qid, ref in binary.items():
        out[qid] = QrelEntry(query_id=qid, relevant_ref=ref)
    for qid, grades in graded.items():
        if qid in out:
            raise EvalError(f"query {qid} has both binary and graded entries")
        out[qid] = QrelEntry(query_id=qid, grades=grades)
    return out
