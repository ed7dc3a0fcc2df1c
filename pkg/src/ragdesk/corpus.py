"""Document ingestion: cleaning, word-window chunking, and role-based visibility."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

PAGE_BREAK = "\f"
_SENTENCE_END = (".", "!", "?")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class RawDocument:
    origin_id: str
    title: str
    body: str
    source_uri: str = ""
    allowed_roles: frozenset[str] = field(default_factory=frozenset)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.origin_id:
            raise CorpusError("origin_id must be non-empty")
        object.__setattr__(self, "allowed_roles", frozenset(self.allowed_roles))


@dataclass(frozen=True)
class ChunkingConfig:
    """Preprocessing knobs. Defaults are setting A; see setting_b()/setting_c()."""

    clean_empty_lines: bool = True
    clean_whitespace: bool = True
    clean_header_footer: bool = True
    split_by: str = "word"
    split_length: int = 300
    split_overlap: int = 50
    split_respect_sentence_boundary: bool = True
    max_chars_check: int = 1000

    def __post_init__(self):
        if self.split_by != "word":
            raise CorpusError(f"unsupported split_by: {self.split_by!r}")
        if self.split_length < 1:
            raise CorpusError("split_length must be positive")
        if not 0 <= self.split_overlap < self.split_length:
            raise CorpusError("split_overlap must satisfy 0 <= overlap < split_length")
        if self.max_chars_check < 1:
            raise CorpusError("max_chars_check must be >= 1")

    @classmethod
    def setting_a(cls) -> "ChunkingConfig":
        return cls()

    @classmethod
    def setting_b(cls) -> "ChunkingConfig":
        return cls(split_length=100, split_overlap=25)

    @classmethod
    def setting_c(cls) -> "ChunkingConfig":
        return cls(max_chars_check=3000)


@dataclass(frozen=True)
class Chunk:
    origin_id: str
    local_id: int
    title: str
    text: str
    char_count: int
    allowed_roles: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.char_count != len(self.text):
            raise CorpusError("char_count must equal len(text)")
        if self.local_id < 0:
            raise CorpusError("local_id must be non-negative")
        object.__setattr__(self, "allowed_roles", frozenset(self.allowed_roles))

    @property
    def ref(self) -> tuple[str, int]:
        return (self.origin_id, self.local_id)


def _remove_repeated_edges(body: str, min_pages: int = 3) -> str:
    """Drop header/footer lines repeated verbatim across >= min_pages page segments."""
    pages = body.split(PAGE_BREAK)
    if len(pages) < min_pages:
        return body
    firsts: dict[str, int] = {}
    lasts: dict[str, int] = {}
    for page in pages:
        lines = page.split("\n")
        stripped = [ln for ln in lines if ln.strip()]
        if not stripped:
            continue
        firsts[stripped[0]] = firsts.get(stripped[0], 0) + 1
        lasts[stripped[-1]] = lasts.get(stripped[-1], 0) + 1
    headers = {ln for ln, n in firsts.items() if n >= min_pages}
    footers = {ln for ln, n in lasts.items() if n >= min_pages}
    if not headers and not footers:
        return body
    out_pages = []
    for page in pages:
        lines = page.split("\n")
        kept = [ln for ln in lines if not (ln.strip() and (ln in headers or ln in footers))]
        out_pages.append("\n".join(kept))
    return PAGE_BREAK.join(out_pages)


def clean_text(body: str, config: ChunkingConfig) -> str:
    if config.clean_header_footer:
        body = _remove_repeated_edges(body)
    body = body.replace(PAGE_BREAK, "\n")
    if config.clean_whitespace:
        lines = [re.sub(r"[ \t]+", " ", ln.strip()) for ln in body.split("\n")]
        body = "\n".join(lines)
    if config.clean_empty_lines:
        body = re.sub(r"\n\s*\n(\s*\n)+", "\n\n", body)
        body = re.sub(r"\n{3,}", "\n\n", body)
    return body


def enforce_max_chars(chunk_text: str, max_chars: int) -> list[str]:
    """Split text into pieces of at most max_chars characters.

    Splits at the last whitespace at or before the boundary; a single token
    longer than max_chars is split mid-token.
    """
    if max_chars < 1:
        raise CorpusError("max_chars must be >= 1")
    if len(chunk_text) <= max_chars:
        return [chunk_text]
    pieces = []
    rest = chunk_text
    while len(rest) > max_chars:
        window = rest[: max_chars + 1]
        cut = -1
        for m in re.finditer(r"\s", window):
            if m.start() <= max_chars:
                cut = m.start()
        if cut > 0:
            pieces.append(rest[:cut])
            rest = rest[cut + 1 :]
        else:
            pieces.append(rest[:max_chars])
            rest = rest[max_chars:]
    pieces.append(rest)
    return pieces


def _window_end(words: list[str], start: int, length: int, respect_sentences: bool) -> int:
    end = min(start + length, len(words))
    if not respect_sentences or end == len(words):
        return end
    midpoint = start + length // 2
    for i in range(end - 1, midpoint, -1):
        if words[i].rstrip("\"')]}").endswith(_SENTENCE_END):
            return i + 1
    return end


def split_into_chunks(doc: RawDocument, config: ChunkingConfig) -> list[Chunk]:
    """Sliding word window over the cleaned body; deterministic for fixed inputs."""
    body = clean_text(doc.body, config)
    words = body.split()
    if not words:
        return []
    stride = config.split_length - config.split_overlap
    texts: list[str] = []
    start = 0
    while True:
        end = _window_end(words, start, config.split_length, config.split_respect_sentence_boundary)
        texts.append(" ".join(words[start:end]))
        if end >= len(words):
            break
        start = max(end - config.split_overlap, start + 1) if config.split_respect_sentence_boundary else start + stride
    chunks = []
    local_id = 0
    for text in texts:
        for piece in enforce_max_chars(text, config.max_chars_check):
            chunks.append(
                Chunk(
                    origin_id=doc.origin_id,
                    local_id=local_id,
                    title=doc.title,
                    text=piece,
                    char_count=len(piece),
                    allowed_roles=doc.allowed_roles,
                )
            )
            local_id += 1
    return chunks


def expected_chunk_count(n_words: int, split_length: int, split_overlap: int) -> int:
    """Window-count formula for boundary-respect off (used as a test oracle hook)."""
    if n_words <= split_length:
        return 1
    stride = split_length - split_overlap
    return math.ceil((n_words - split_length) / stride) + 1


def filter_by_role(chunks: list[Chunk], role: str) -> list[Chunk]:
    return [c for c in chunks if role in c.allowed_roles]


def load_corpus(path) -> list[RawDocument]:
    """Load a line-delimited JSON corpus file; one document per line."""
    docs: list[RawDocument] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                doc = RawDocument(
                    origin_id=rec["origin_id"],
                    title=rec.get("title", ""),
                    body=rec["body"],
                    source_uri=rec.get("source_uri", ""),
                    allowed_roles=frozenset(rec.get("allowed_roles", [])),
                    metadata=dict(rec.get("metadata", {})),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"malformed corpus line {lineno}: {exc}") from exc
            if doc.origin_id in seen:
                raise CorpusError(f"duplicate origin_id {doc.origin_id!r} at line {lineno}")
            seen.add(doc.origin_id)
            docs.append(doc)
    return docs


def dump_corpus(docs: list[RawDocument], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(
                json.dumps(
                    {
                        "origin_id": doc.origin_id,
                        "title": doc.title,
                        "body": doc.body,
                        "source_uri": doc.source_uri,
                        "allowed_roles": sorted(doc.allowed_roles),
                        "metadata": doc.metadata,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
