"""Answer generation: reversed top-K XML prompt, pluggable reader, citation rail."""
from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Protocol
from xml.sax.saxutils import escape

from .corpus import Chunk, filter_by_role
from .index import Bm25Index, DenseIndex, SearchHit, dense_search, tokenize
from .rerank import FeatureContext, StudentScorer, rerank

logger = logging.getLogger(__name__)

CITATION_INSTRUCTION = (
    "Please include a single source at the end of your answer, i.e., [Document0] "
    "if Document0 is the source. If there is more than one source, use "
    "[Document0][Document1] if Document0 and Document1 are the sources."
)

DEFAULT_GUIDELINES = (
    "You are an assistant for customer-service agents. Answer the question "
    "using only the documents provided below. Be concise and factual."
)

APOLOGY = "I'm sorry. I was unable to find the answer in the documents"

_CITATION_RE = re.compile(r"\[Document(\d+)\]")


class AnswerError(RuntimeError):
    pass


class ReaderTransportError(AnswerError):
    """Reader backend unreachable; distinct from a no-answer outcome."""


@dataclass(frozen=True)
class PromptBundle:
    system_preamble: str
    document_blocks: list[tuple[int, str, str]]  # (doc_index, title, content), retrieval order
    question: str
    doc_index_map: dict[int, tuple[str, int]]


@dataclass(frozen=True)
class AnswerEnvelope:
    answer_text: str
    citations: list[tuple[str, int]]
    no_answer: bool
    raw_reader_output: str

    def __post_init__(self):
        if self.no_answer != (not self.citations):
            raise AnswerError("no_answer must hold exactly when citations are empty")
        if self.no_answer and self.answer_text:
            raise AnswerError("no-answer envelopes carry no answer text")


class ReaderClient(Protocol):
    name: str

    def complete(self, prompt: str) -> str: ...


def assemble_prompt(
    question: str,
    hits: list[SearchHit],
    chunks_by_ref: dict[tuple[str, int], Chunk],
    guidelines: str = DEFAULT_GUIDELINES,
) -> PromptBundle:
    """Doc index i is the rank-(i+1) hit; serialization reverses the order so the
    best hit appears last (closest to the question)."""
    if not hits:
        raise AnswerError("nothing to ground on")
    blocks = []
    index_map = {}
    for i, hit in enumerate(sorted(hits, key=lambda h: h.rank)):
        chunk = chunks_by_ref[hit.chunk_ref]
        blocks.append((i, chunk.title, chunk.text))
        index_map[i] = hit.chunk_ref
    preamble = f"{guidelines}\n\n{CITATION_INSTRUCTION}"
    return PromptBundle(
        system_preamble=preamble,
        document_blocks=blocks,
        question=question,
        doc_index_map=index_map,
    )


def render_prompt(bundle: PromptBundle) -> str:
    parts = [bundle.system_preamble, "", "<Documents>"]
    for doc_index, title, content in reversed(bundle.document_blocks):
        parts.append(
            f"<Document{doc_index}><Title>{escape(title)}</Title>"
            f"<Content>{escape(content)}</Content></Document{doc_index}>"
        )
    parts.extend(["</Documents>", "", f"Question: {bundle.question}", "Answer:"])
    return "\n".join(parts)


def parse_citations(reader_output: str) -> tuple[list[int], str]:
    """Extract [DocumentN] tokens (deduplicated, first-occurrence order) and
    return the output with those tokens stripped."""
    indices: list[int] = []
    for m in _CITATION_RE.finditer(reader_output):
        n = int(m.group(1))
        if n not in indices:
            indices.append(n)
    stripped = _CITATION_RE.sub(" ", reader_output)
    stripped = re.sub(r"[ \t]{2,}", " ", stripped)
    stripped = "\n".join(ln.strip() for ln in stripped.split("\n")).strip()
    return indices, stripped


def apply_citation_rail(reader_output: str, bundle: PromptBundle) -> AnswerEnvelope:
    indices, stripped = parse_citations(reader_output)
    citations = []
    for n in indices:
        if n in bundle.doc_index_map:
            citations.append(bundle.doc_index_map[n])
        else:
            logger.warning("dropping out-of-range citation Document%d", n)
    if not citations:
        return AnswerEnvelope(
            answer_text="", citations=[], no_answer=True, raw_reader_output=reader_output
        )
    return AnswerEnvelope(
        answer_text=stripped, citations=citations, no_answer=False, raw_reader_output=reader_output
    )


class MockReader:
    """Deterministic reader: answers from the document block with the highest
    lexical overlap with the question and cites it; apologizes with no citation
    when nothing overlaps."""

    name = "mock-reader"
    _BLOCK_RE = re.compile(
        r"<Document(\d+)><Title>(.*?)</Title><Content>(.*?)</Content></Document\1>",
        re.S,
    )
    _QUESTION_RE = re.compile(r"^Question: (.*)$", re.M)

    def __init__(self, min_overlap: float = 0.25):
        self.min_overlap = min_overlap

    def complete(self, prompt: str) -> str:
        qm = self._QUESTION_RE.search(prompt)
        question = qm.group(1) if qm else ""
        q_tokens = [t for t in tokenize(question)]
        best_idx, best_overlap, best_content = None, 0.0, ""
        for m in self._BLOCK_RE.finditer(prompt):
            doc_index = int(m.group(1))
            doc_tokens = set(tokenize(m.group(2))) | set(tokenize(m.group(3)))
            overlap = (
                sum(1 for t in q_tokens if t in doc_tokens) / len(q_tokens)
                if q_tokens
                else 0.0
            )
            # strict > keeps the earliest-seen block on ties; blocks arrive in
            # reversed order so later (better-ranked) blocks win only outright
            if overlap > best_overlap:
                best_idx, best_overlap, best_content = doc_index, overlap, m.group(3)
        if best_idx is None or best_overlap < self.min_overlap:
            return APOLOGY
        sentence = re.split(r"(?<=[.!?])\s", best_content.strip(), maxsplit=1)[0]
        return f"{sentence} [Document{best_idx}]"


@dataclass
class AnswerPipeline:
    """Role filter -> dense retrieval (k=20) -> optional rerank -> top-3 prompt
    -> reader -> citation rail, with a trace record per question."""

    chunks: list[Chunk]
    dense: DenseIndex
    bm25: Bm25Index
    reader: ReaderClient
    scorer: StudentScorer | None = None
    top_k_retrieve: int = 20
    top_k_ground: int = 3
    trace_path: str | None = None
    _role_cache: dict[str, tuple[list[Chunk], DenseIndex, Bm25Index]] = field(
        default_factory=dict, repr=False
    )

    def __post_init__(self):
        self.chunks_by_ref = {c.ref: c for c in self.chunks}

    def _for_role(self, role: str | None):
        if role is None:
            return self.chunks, self.dense, self.bm25
        cached = self._role_cache.get(role)
        if cached is None:
            visible = filter_by_role(self.chunks, role)
            if not visible:
                cached = ([], None, None)
            elif len(visible) == len(self.chunks):
                cached = (self.chunks, self.dense, self.bm25)
            else:
                cached = (
                    visible,
                    DenseIndex.build(visible, self.dense.provider),
                    Bm25Index(visible, self.bm25.params),
                )
            self._role_cache[role] = cached
        return cached

    def search(self, question: str, role: str | None = None, k: int | None = None,
               use_reranker: bool | None = None) -> list[SearchHit]:
        visible, dense, bm25 = self._for_role(role)
        if not visible:
            return []
        hits = dense_search(question, dense, k or self.top_k_retrieve)
        rerank_on = self.scorer is not None if use_reranker is None else (use_reranker and self.scorer is not None)
        if rerank_on:
            ctx = FeatureContext.from_retrieval(question, hits, bm25)
            hits = rerank(question, hits, self.scorer, self.chunks_by_ref, ctx)
        return hits

    def answer_question(
        self, question: str, role: str | None = None, use_reranker: bool | None = None
    ) -> AnswerEnvelope:
        start = time.monotonic()
        hits = self.search(question, role=role, use_reranker=use_reranker)
        grounded = hits[: self.top_k_ground]
        if not grounded:
            envelope = AnswerEnvelope(
                answer_text="", citations=[], no_answer=True, raw_reader_output=""
            )
            self._trace(question, role, [], "", "", envelope, start)
            return envelope
        bundle = assemble_prompt(question, grounded, self.chunks_by_ref)
        prompt = render_prompt(bundle)
        try:
            raw = self.reader.complete(prompt)
        except Exception as exc:
            raise ReaderTransportError(f"reader call failed: {exc}") from exc
        envelope = apply_citation_rail(raw, bundle)
        self._trace(question, role, grounded, prompt, raw, envelope, start)
        return envelope

    def _trace(self, question, role, hits, prompt, raw, envelope: AnswerEnvelope, start):
        if not self.trace_path:
            return
        record = {
            "question": question,
            "role": role,
            "hits": [[list(h.chunk_ref), h.score, h.rank] for h in hits],
            "prompt": prompt,
            "raw_reader_output": raw,
            "no_answer": envelope.no_answer,
            "citations": [list(r) for r in envelope.citations],
            "latency_s": time.monotonic() - start,
        }
        with open(self.trace_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
