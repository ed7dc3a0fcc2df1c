"""Sparse (Okapi BM25) and dense (flat cosine) retrieval over chunks.

Both indexes are immutable snapshots after build; searches are exhaustive
scans so results match a brute-force oracle exactly.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .corpus import Chunk
from .kernels import bm25_scores, cosine_scores

_TOKEN_RE = re.compile(r"[a-z0-9]+")

SNAPSHOT_VERSION = 1


class IndexError_(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedBowProvider:
    """Seeded hashed bag-of-words projection; deterministic, no network.

    Each token maps to a fixed pseudo-random gaussian direction derived from
    a keyed hash, and a text embeds to the sum of its token directions.
    """

    def __init__(self, dimension: int = 64, seed: int = 13):
        self.name = f"hashed-bow-{dimension}-{seed}"
        self.dimension = dimension
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(
                f"{self.seed}:{token}".encode(), digest_size=8
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            vec = rng.standard_normal(self.dimension)
            self._cache[token] = vec
        return vec

    def embed(self, text: str) -> np.ndarray:
        out = np.zeros(self.dimension)
        for token in tokenize(text):
            out += self._token_vector(token)
        return out


def get_provider(name: str) -> EmbeddingProvider:
    """Resolve a provider by name. Only the bundled offline provider is built in;
    external HTTP providers plug in through the same interface."""
    m = re.fullmatch(r"hashed-bow-(\d+)-(\d+)", name)
    if m:
        return HashedBowProvider(dimension=int(m.group(1)), seed=int(m.group(2)))
    if name == "hashed-bow":
        return HashedBowProvider()
    raise IndexError_(f"unknown embedding provider: {name!r}")


@dataclass(frozen=True)
class VectorRecord:
    chunk_ref: tuple[str, int]
    vector: np.ndarray
    title: str


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.0
    b: float = 0.5

    def __post_init__(self):
        if self.k1 < 0:
            raise IndexError_("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise IndexError_("b must be in [0, 1]")


@dataclass(frozen=True)
class SearchHit:
    chunk_ref: tuple[str, int]
    score: float
    rank: int


def rank_hits(scored: list[tuple[tuple[str, int], float]], k: int) -> list[SearchHit]:
    """Top-k by descending score, ties broken by (origin_id, local_id) ascending."""
    ordered = sorted(scored, key=lambda rs: (-rs[1], rs[0]))
    return [
        SearchHit(chunk_ref=ref, score=float(score), rank=i + 1)
        for i, (ref, score) in enumerate(ordered[:k])
    ]


def embed_chunk(chunk: Chunk, provider: EmbeddingProvider, normalize: bool = True) -> VectorRecord:
    vec = provider.embed(chunk.title) + provider.embed(chunk.text)
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        raise IndexError_(f"degenerate embedding for chunk {chunk.ref}")
    if normalize:
        vec = vec / norm
    return VectorRecord(chunk_ref=chunk.ref, vector=vec, title=chunk.title)


class DenseIndex:
    """Flat cosine index: unit-norm vectors scanned exhaustively."""

    def __init__(self, records: list[VectorRecord], provider: EmbeddingProvider):
        if not records:
            raise IndexError_("empty dense index")
        self.provider = provider
        self.refs = [r.chunk_ref for r in records]
        self.titles = [r.title for r in records]
        self.matrix = np.ascontiguousarray(np.stack([r.vector for r in records]))

    def __len__(self) -> int:
        return len(self.refs)

    @classmethod
    def build(cls, chunks: list[Chunk], provider: EmbeddingProvider) -> "DenseIndex":
        return cls([embed_chunk(c, provider) for c in chunks], provider)

    def embed_query(self, query: str) -> np.ndarray:
        q = self.provider.embed(query)
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise IndexError_("degenerate query embedding")
        return q / norm


def dense_search(query: str, index: DenseIndex, k: int, provider: EmbeddingProvider | None = None) -> list[SearchHit]:
    if k < 1:
        raise IndexError_("k must be >= 1")
    if provider is not None and provider.name != index.provider.name:
        raise IndexError_("provider does not match the one the index was built with")
    q = index.embed_query(query)
    scores = cosine_scores(index.matrix, q)
    return rank_hits(list(zip(index.refs, scores)), k)


class Bm25Index:
    """Inverted index over chunk title+text tokens with Okapi BM25 scoring."""

    def __init__(self, chunks: list[Chunk], params: Bm25Params = Bm25Params()):
        if not chunks:
            raise IndexError_("empty bm25 index")
        self.params = params
        self.refs = [c.ref for c in chunks]
        self.doc_tokens = [tokenize(c.title) + tokenize(c.text) for c in chunks]
        self.doc_len = np.array([len(t) for t in self.doc_tokens], dtype=np.float64)
        self.avgdl = float(self.doc_len.mean())
        self.n_docs = len(chunks)
        postings: dict[str, list[tuple[int, int]]] = {}
        for i, toks in enumerate(self.doc_tokens):
            counts: dict[str, int] = {}
            for t in toks:
                counts[t] = counts.get(t, 0) + 1
            for t, tf in counts.items():
                postings.setdefault(t, []).append((i, tf))
        self.postings = {
            t: (
                np.array([d for d, _ in plist], dtype=np.int64),
                np.array([tf for _, tf in plist], dtype=np.float64),
            )
            for t, plist in postings.items()
        }
        self.df = {t: len(ids) for t, (ids, _) in self.postings.items()}

    def __len__(self) -> int:
        return self.n_docs

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return float(np.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5)))

    def scores(self, query: str) -> np.ndarray:
        terms = tokenize(query)
        if not terms:
            raise IndexError_("empty query")
        doc_ids_parts, tf_parts, idfs = [], [], []
        for t in terms:
            if t in self.postings:
                ids, tfs = self.postings[t]
                doc_ids_parts.append(ids)
                tf_parts.append(tfs)
                idfs.append(self.idf(t))
        if not idfs:
            return np.zeros(self.n_docs)
        offsets = np.zeros(len(idfs) + 1, dtype=np.int64)
        np.cumsum([len(p) for p in doc_ids_parts], out=offsets[1:])
        return bm25_scores(
            np.concatenate(doc_ids_parts),
            np.concatenate(tf_parts),
            offsets,
            np.array(idfs, dtype=np.float64),
            self.doc_len,
            self.avgdl,
            self.params.k1,
            self.params.b,
            self.n_docs,
        )


def bm25_search(query: str, index: Bm25Index, k: int, params: Bm25Params | None = None) -> list[SearchHit]:
    if k < 1:
        raise IndexError_("k must be >= 1")
    if params is not None and params != index.params:
        raise IndexError_("params differ from the ones the index was built with")
    scores = index.scores(query)
    return rank_hits(list(zip(index.refs, scores)), k)


def random_search(index, k: int, seed: int) -> list[SearchHit]:
    """Uniform random baseline; deterministic per seed."""
    refs = index.refs
    k = min(k, len(refs))
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(refs), size=k, replace=False)
    return [
        SearchHit(chunk_ref=refs[int(i)], score=0.0, rank=pos + 1)
        for pos, i in enumerate(picks)
    ]


def relative_difference(baseline: float, variant: float) -> float:
    """Percent change from baseline, the reporting convention for all tables."""
    if baseline == 0:
        raise IndexError_("relative_difference undefined for zero baseline")
    return 100.0 * (variant - baseline) / baseline


def save_snapshot(path, dense: DenseIndex, chunks: list[Chunk], params: Bm25Params) -> None:
    """Write a versioned index snapshot directory (manifest + vectors + chunks)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.save(path / "vectors.npy", dense.matrix)
    with open(path / "chunks.jsonl", "w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(
                json.dumps(
                    {
                        "origin_id": c.origin_id,
                        "local_id": c.local_id,
                        "title": c.title,
                        "text": c.text,
                        "allowed_roles": sorted(c.allowed_roles),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    manifest = {
        "version": SNAPSHOT_VERSION,
        "provider": dense.provider.name,
        "dimension": dense.provider.dimension,
        "n_chunks": len(chunks),
        "bm25": {"k1": params.k1, "b": params.b},
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_snapshot(path) -> tuple[list[Chunk], DenseIndex, Bm25Index]:
    path = Path(path)
    with open(path / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest["version"] != SNAPSHOT_VERSION:
        raise IndexError_(f"unsupported snapshot version {manifest['version']}")
    provider = get_provider(manifest["provider"])
    chunks = []
    with open(path / "chunks.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            chunks.append(
                Chunk(
                    origin_id=rec["origin_id"],
                    local_id=rec["local_id"],
                    title=rec["title"],
                    text=rec["text"],
                    char_count=len(rec["text"]),
                    allowed_roles=frozenset(rec["allowed_roles"]),
                )
            )
    matrix = np.load(path / "vectors.npy")
    records = [
        VectorRecord(chunk_ref=c.ref, vector=matrix[i], title=c.title)
        for i, c in enumerate(chunks)
    ]
    dense = DenseIndex(records, provider)
    bm25 = Bm25Index(chunks, Bm25Params(**manifest["bm25"]))
    return chunks, dense, bm25
