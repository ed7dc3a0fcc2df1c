import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragdesk.corpus import (
    PAGE_BREAK,
    Chunk,
    ChunkingConfig,
    CorpusError,
    RawDocument,
    clean_text,
    dump_corpus,
    enforce_max_chars,
    expected_chunk_count,
    filter_by_role,
    load_corpus,
    split_into_chunks,
)


def make_doc(body, origin_id="d1", title="t", roles=("agent",)):
    return RawDocument(origin_id=origin_id, title=title, body=body, allowed_roles=frozenset(roles))


def words_doc(n, word="ab"):
    # 2-char words keep 300-word windows under the 1000-char cap
    return make_doc(" ".join(f"{word}" for _ in range(n)))


class TestCleanText:
    def test_empty(self):
        assert clean_text("", ChunkingConfig()) == ""

    def test_blank_line_runs_collapse(self):
        cfg = ChunkingConfig(clean_header_footer=False, clean_whitespace=False)
        assert clean_text("a\n\n\n\nb", cfg) == "a\n\nb"

    def test_whitespace_cleanup(self):
        cfg = ChunkingConfig(clean_header_footer=False, clean_empty_lines=False)
        assert clean_text("  a   b  \n\tc\t d ", cfg) == "a b\nc d"

    def test_header_removed_across_pages(self):
        pages = [f"ACME Manual\npage {i} body text\nfooter line" for i in range(3)]
        out = clean_text(PAGE_BREAK.join(pages), ChunkingConfig())
        assert "ACME Manual" not in out
        assert "footer line" not in out
        assert "page 1 body text" in out

    def test_two_pages_keep_repeats(self):
        pages = ["HDR\nbody one", "HDR\nbody two"]
        out = clean_text(PAGE_BREAK.join(pages), ChunkingConfig())
        assert "HDR" in out


class TestEnforceMaxChars:
    def test_under_limit_passthrough(self):
        text = "x" * 500
        assert enforce_max_chars(text, 1000) == [text]

    def test_empty_passthrough(self):
        assert enforce_max_chars("", 1000) == [""]

    def test_five_char_words(self):
        # 2500 chars of 5-char words: pieces break at whitespace <= 1000
        words = [f"w{i:04d}" for i in range(417)]
        text = " ".join(words)[:2500]
        pieces = enforce_max_chars(text, 1000)
        assert len(pieces) == 3
        assert all(len(p) <= 1000 for p in pieces)
        assert " ".join(pieces).split() == text.split()

    def test_single_long_token_split_mid_token(self):
        pieces = enforce_max_chars("x" * 2500, 1000)
        assert [len(p) for p in pieces] == [1000, 1000, 500]
        assert "".join(pieces) == "x" * 2500

    def test_reassembly_preserves_words(self):
        text = ("lorem ipsum dolor sit amet " * 100).strip()
        pieces = enforce_max_chars(text, 97)
        assert all(len(p) <= 97 for p in pieces)
        assert " ".join(pieces).split() == text.split()

    def test_bad_max(self):
        with pytest.raises(CorpusError):
            enforce_max_chars("abc", 0)


class TestSplitIntoChunks:
    def test_650_words_setting_a_stride(self):
        cfg = ChunkingConfig(split_respect_sentence_boundary=False)
        chunks = split_into_chunks(words_doc(650), cfg)
        assert len(chunks) == 3
        sizes = [len(c.text.split()) for c in chunks]
        assert sizes == [300, 300, 150]  # windows [0,300), [250,550), [500,650)

    def test_650_words_setting_b(self):
        cfg = ChunkingConfig(split_length=100, split_overlap=25, split_respect_sentence_boundary=False)
        chunks = split_into_chunks(words_doc(650), cfg)
        assert len(chunks) == 9 == expected_chunk_count(650, 100, 25)

    def test_short_doc_single_chunk(self):
        doc = words_doc(10)
        chunks = split_into_chunks(doc, ChunkingConfig())
        assert len(chunks) == 1
        assert chunks[0].text == clean_text(doc.body, ChunkingConfig())

    def test_empty_doc_zero_chunks(self):
        assert split_into_chunks(make_doc("   \n  "), ChunkingConfig()) == []

    def test_local_ids_contiguous(self):
        cfg = ChunkingConfig(split_respect_sentence_boundary=False)
        chunks = split_into_chunks(words_doc(1400), cfg)
        assert [c.local_id for c in chunks] == list(range(len(chunks)))

    def test_sentence_boundary_retraction(self):
        # terminator at word 8 of a 10-word window, past the midpoint
        words = ["aa"] * 7 + ["bb."] + ["cc"] * 12
        doc = make_doc(" ".join(words))
        cfg = ChunkingConfig(split_length=10, split_overlap=2, max_chars_check=1000)
        chunks = split_into_chunks(doc, cfg)
        assert chunks[0].text.endswith("bb.")
        assert len(chunks[0].text.split()) == 8

    def test_deterministic(self):
        doc = words_doc(777)
        cfg = ChunkingConfig()
        assert split_into_chunks(doc, cfg) == split_into_chunks(doc, cfg)

    def test_metadata_propagates(self):
        chunks = split_into_chunks(make_doc("hello world", roles=("billing",)), ChunkingConfig())
        c = chunks[0]
        assert c.origin_id == "d1" and c.title == "t" and c.allowed_roles == {"billing"}

    @given(
        n_words=st.integers(1, 2000),
        length=st.integers(2, 400),
        overlap_frac=st.floats(0.0, 0.9),
    )
    @settings(max_examples=60, deadline=None)
    def test_window_count_formula(self, n_words, length, overlap_frac):
        overlap = int(length * overlap_frac)
        assert overlap < length
        cfg = ChunkingConfig(
            split_length=length,
            split_overlap=overlap,
            split_respect_sentence_boundary=False,
            max_chars_check=3 * length,  # 2-char words never trip the cap
        )
        chunks = split_into_chunks(words_doc(n_words), cfg)
        assert len(chunks) == expected_chunk_count(n_words, length, overlap)

    @given(n_words=st.integers(50, 800))
    @settings(max_examples=30, deadline=None)
    def test_consecutive_overlap_exact(self, n_words):
        cfg = ChunkingConfig(
            split_length=40, split_overlap=10, split_respect_sentence_boundary=False, max_chars_check=10_000
        )
        doc = make_doc(" ".join(f"w{i}" for i in range(n_words)))
        chunks = split_into_chunks(doc, cfg)
        for a, b in zip(chunks, chunks[1:]):
            assert a.text.split()[-10:] == b.text.split()[:10]

    def test_char_count_respects_cap(self):
        doc = make_doc(" ".join("abcdefghij" for _ in range(400)))
        cfg = ChunkingConfig(max_chars_check=300)
        for c in split_into_chunks(doc, cfg):
            assert c.char_count <= 300
            assert c.char_count == len(c.text)


class TestFilterByRole:
    def chunk(self, i, roles):
        return Chunk("d", i, "t", "x", 1, frozenset(roles))

    def test_full_visibility(self):
        chunks = [self.chunk(i, {"agent"}) for i in range(3)]
        assert filter_by_role(chunks, "agent") == chunks

    def test_partition(self):
        billing = [self.chunk(0, {"billing"}), self.chunk(2, {"billing"})]
        tech = [self.chunk(1, {"tech"})]
        mixed = [billing[0], tech[0], billing[1]]
        assert filter_by_role(mixed, "billing") == billing

    def test_unknown_role_empty(self):
        assert filter_by_role([self.chunk(0, {"a"})], "nope") == []

    def test_idempotent_subsequence(self):
        chunks = [self.chunk(i, {"a"} if i % 2 else {"b"}) for i in range(10)]
        once = filter_by_role(chunks, "a")
        assert filter_by_role(once, "a") == once


class TestLoadCorpus:
    def test_round_trip(self, tmp_path):
        docs = [
            RawDocument("a", "T1", "body one", "http://x/1", frozenset({"agent"}), {"k": "v"}),
            RawDocument("b", "T2", "body two"),
        ]
        path = tmp_path / "corpus.jsonl"
        dump_corpus(docs, path)
        assert load_corpus(path) == docs

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("")
        assert load_corpus(path) == []

    def test_duplicate_origin_id(self, tmp_path):
        path = tmp_path / "c.jsonl"
        line = '{"origin_id": "a", "body": "x"}\n'
        path.write_text(line + line)
        with pytest.raises(CorpusError, match="duplicate origin_id"):
            load_corpus(path)

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"origin_id": "a", "body": "x"}\nnot json\n')
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(path)
