"""HTTP gateway binding the pipeline together: ask, feedback, search, ingest."""
from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException, Query
from pydantic import BaseModel

from . import abtest, corpus, index, rerank
from .answer import AnswerPipeline, MockReader, ReaderTransportError
from .corpus import ChunkingConfig, RawDocument, split_into_chunks
from .index import Bm25Index, Bm25Params, DenseIndex, get_provider


@dataclass
class ServiceConfig:
    data_dir: str = "data"
    provider_name: str = "hashed-bow"
    reader_name: str = "mock"
    reranker_model_path: str | None = None
    top_k_retrieve: int = 20
    top_k_ground: int = 3
    experiment_salt: str = "exp-1"
    role_header: str = "x-agent-role"
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    bm25: Bm25Params = field(default_factory=Bm25Params)

    def __post_init__(self):
        if self.top_k_ground > self.top_k_retrieve:
            raise ValueError("top_k_ground must be <= top_k_retrieve")

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        chunking = ChunkingConfig(**raw.pop("chunking", {}))
        bm25 = Bm25Params(**raw.pop("bm25", {}))
        return cls(chunking=chunking, bm25=bm25, **raw)


class GatewayService:
    """Owns the index snapshot, the pipeline, and the append-only logs.

    The snapshot (chunks + indexes + pipeline) is swapped atomically under a
    lock; request handlers read a consistent reference.
    """

    def __init__(self, config: ServiceConfig, reader=None, scorer: rerank.StudentScorer | None = None):
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.trace_path = self.data_dir / "traces.jsonl"
        self.feedback_path = self.data_dir / "feedback.jsonl"
        self.exposure_path = self.data_dir / "exposures.jsonl"
        self.reader = reader or MockReader()
        self.scorer = scorer
        if scorer is None and config.reranker_model_path:
            self.scorer = rerank.StudentScorer.load(config.reranker_model_path)
        self.provider = get_provider(config.provider_name)
        self._lock = threading.Lock()
        self._pipeline: AnswerPipeline | None = None
        self._docs: dict[str, RawDocument] = {}
        self._query_index: dict[str, dict] = {}
        self._feedback: dict[str, dict] = {}

    # --- snapshot management -------------------------------------------------

    def ingest(self, docs: list[RawDocument]) -> dict:
        """Validate, chunk, embed, and swap in a new snapshot atomically."""
        with self._lock:
            merged = dict(self._docs)
            for doc in docs:
                if doc.origin_id in merged:
                    raise corpus.CorpusError(f"duplicate origin_id {doc.origin_id!r}")
                merged[doc.origin_id] = doc
            chunks = [
                c
                for doc in merged.values()
                for c in split_into_chunks(doc, self.config.chunking)
            ]
            if not chunks:
                raise corpus.CorpusError("corpus produced no chunks")
            dense = DenseIndex.build(chunks, self.provider)
            bm25 = Bm25Index(chunks, self.config.bm25)
            pipeline = AnswerPipeline(
                chunks=chunks,
                dense=dense,
                bm25=bm25,
                reader=self.reader,
                scorer=self.scorer,
                top_k_retrieve=self.config.top_k_retrieve,
                top_k_ground=self.config.top_k_ground,
                trace_path=str(self.trace_path),
            )
            self._docs = merged
            self._pipeline = pipeline
            return {"docs": len(docs), "total_docs": len(merged), "chunks": len(chunks)}

    @property
    def pipeline(self) -> AnswerPipeline:
        with self._lock:
            if self._pipeline is None:
                raise RuntimeError("no index loaded; ingest documents first")
            return self._pipeline

    def source_uri(self, origin_id: str) -> str:
        doc = self._docs.get(origin_id)
        return doc.source_uri if doc else ""

    # --- request operations --------------------------------------------------

    def ask(self, question: str, agent_id: str, role: str | None, today: date | None = None) -> dict:
        today = today or date.today()
        variant = abtest.assign_variant(agent_id, today, self.config.experiment_salt)
        use_reranker = variant == abtest.TREATMENT and self.scorer is not None
        envelope = self.pipeline.answer_question(question, role=role, use_reranker=use_reranker)
        query_id = uuid.uuid4().hex
        record = {
            "query_id": query_id,
            "agent_id": agent_id,
            "day": today.isoformat(),
            "variant": variant,
            "no_answer": envelope.no_answer,
        }
        with self._lock:
            self._query_index[query_id] = record
            with open(self.exposure_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
        return {
            "answer_text": envelope.answer_text,
            "citations": [
                {
                    "origin_id": ref[0],
                    "local_id": ref[1],
                    "title": self.pipeline.chunks_by_ref[ref].title,
                    "source_uri": self.source_uri(ref[0]),
                }
                for ref in envelope.citations
            ],
            "no_answer": envelope.no_answer,
            "query_id": query_id,
            "variant": variant,
        }

    def feedback(self, query_id: str, thumbs: str) -> dict:
        if thumbs not in ("up", "down"):
            raise ValueError("thumbs must be up|down")
        with self._lock:
            exposure = self._query_index.get(query_id)
            if exposure is None:
                raise KeyError(query_id)
            event = {
                "query_id": query_id,
                "agent_id": exposure["agent_id"],
                "day": exposure["day"],
                "variant": exposure["variant"],
                "thumbs": thumbs,
            }
            self._feedback[query_id] = event  # last write wins
            with open(self.feedback_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event) + "\n")
        return {"ok": True, "query_id": query_id, "thumbs": thumbs}

    def search(self, query: str, role: str | None, k: int) -> list[dict]:
        hits = self.pipeline.search(query, role=role, k=max(k, self.config.top_k_retrieve))
        out = []
        for h in hits[:k]:
            chunk = self.pipeline.chunks_by_ref[h.chunk_ref]
            out.append(
                {
                    "origin_id": chunk.origin_id,
                    "local_id": chunk.local_id,
                    "title": chunk.title,
                    "snippet": chunk.text[:240],
                    "source_uri": self.source_uri(chunk.origin_id),
                    "score": h.score,
                    "rank": h.rank,
                }
            )
        return out

    def effective_feedback(self) -> list[dict]:
        """Last-write-wins feedback events reconstructed from the log."""
        events: dict[str, dict] = {}
        if self.feedback_path.exists():
            with open(self.feedback_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        ev = json.loads(line)
                        events[ev["query_id"]] = ev
        return list(events.values())


class AskRequest(BaseModel):
    question: str
    agent_id: str = "anonymous"


class FeedbackRequest(BaseModel):
    query_id: str
    thumbs: str


class DocumentsRequest(BaseModel):
    documents: list[dict]


def create_app(service: GatewayService) -> FastAPI:
    app = FastAPI(title="ragdesk gateway")
    role_header = service.config.role_header

    def _role(value: str | None) -> str | None:
        return value or None

    @app.get("/v1/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/ask")
    def ask(req: AskRequest, x_agent_role: str | None = Header(default=None, alias=role_header)):
        if not req.question.strip():
            raise HTTPException(status_code=400, detail="empty question")
        try:
            return service.ask(req.question, req.agent_id, _role(x_agent_role))
        except ReaderTransportError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc

    @app.post("/v1/feedback")
    def feedback(req: FeedbackRequest):
        try:
            return service.feedback(req.query_id, req.thumbs)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail="unknown query_id") from exc
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/v1/search")
    def search(
        q: str = Query(default=""),
        k: int = Query(default=10),
        x_agent_role: str | None = Header(default=None, alias=role_header),
    ):
        if not q.strip():
            raise HTTPException(status_code=400, detail="missing q")
        if k < 1:
            raise HTTPException(status_code=400, detail="k must be >= 1")
        return {"hits": service.search(q, _role(x_agent_role), k)}

    @app.post("/v1/documents")
    def documents(req: DocumentsRequest):
        docs = []
        for i, rec in enumerate(req.documents, start=1):
            try:
                docs.append(
                    RawDocument(
                        origin_id=rec["origin_id"],
                        title=rec.get("title", ""),
                        body=rec["body"],
                        source_uri=rec.get("source_uri", ""),
                        allowed_roles=frozenset(rec.get("allowed_roles", [])),
                        metadata=dict(rec.get("metadata", {})),
                    )
                )
            except (KeyError, TypeError, corpus.CorpusError) as exc:
                raise HTTPException(status_code=422, detail=f"document {i}: {exc}") from exc
        try:
            return service.ingest(docs)
        except corpus.CorpusError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    return app


def recompute_rates(exposure_path, feedback_path) -> dict:
    """Recompute No Answer Rate and Positive Feedback Rate from the logs."""
    exposures = []
    with open(exposure_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                exposures.append(json.loads(line))
    feedback: dict[str, dict] = {}
    fb_path = Path(feedback_path)
    if fb_path.exists():
        with open(fb_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    ev = json.loads(line)
                    feedback[ev["query_id"]] = ev
    n = len(exposures)
    rates: dict = {
        "n_queries": n,
        "no_answer_rate": (sum(1 for e in exposures if e["no_answer"]) / n) if n else None,
    }
    if feedback:
        ups = sum(1 for ev in feedback.values() if ev["thumbs"] == "up")
        rates["positive_feedback_rate"] = ups / len(feedback)
    else:
        rates["positive_feedback_rate"] = None
    by_variant: dict[str, dict] = {}
    for variant in (abtest.CONTROL, abtest.TREATMENT):
        rows = [e for e in exposures if e["variant"] == variant]
        if rows:
            by_variant[variant] = {
                "n_queries": len(rows),
                "no_answer_rate": sum(1 for e in rows if e["no_answer"]) / len(rows),
            }
    rates["by_variant"] = by_variant
    return rates
