import math

import numpy as np
import pytest

from ragdesk.corpus import Chunk
from ragdesk.index import (
    Bm25Index,
    Bm25Params,
    DenseIndex,
    HashedBowProvider,
    IndexError_,
    VectorRecord,
    bm25_search,
    dense_search,
    embed_chunk,
    get_provider,
    load_snapshot,
    random_search,
    relative_difference,
    save_snapshot,
    tokenize,
)


def chunk(i, title, text, origin="d"):
    return Chunk(f"{origin}{i}", 0, title, text, len(text), frozenset({"agent"}))


def brute_force_bm25(chunks, query, k1=1.0, b=0.5):
    """Independent oracle: textbook Okapi evaluation with plain dicts."""
    docs = [tokenize(c.title) + tokenize(c.text) for c in chunks]
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    df = {}
    for d in docs:
        for t in set(d):
            df[t] = df.get(t, 0) + 1
    scores = []
    for d in docs:
        dl = len(d)
        s = 0.0
        for t in tokenize(query):
            tf = d.count(t)
            if tf == 0:
                continue
            idf = math.log(1 + (n - df[t] + 0.5) / (df[t] + 0.5))
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
        scores.append(s)
    return scores


class TestProvider:
    def test_deterministic(self):
        p1, p2 = HashedBowProvider(seed=5), HashedBowProvider(seed=5)
        assert np.array_equal(p1.embed("billing late fee"), p2.embed("billing late fee"))

    def test_seed_changes_embedding(self):
        assert not np.array_equal(
            HashedBowProvider(seed=1).embed("abc"), HashedBowProvider(seed=2).embed("abc")
        )

    def test_finite(self):
        assert np.all(np.isfinite(HashedBowProvider().embed("a b c d e")))

    def test_get_provider_round_trip(self):
        p = HashedBowProvider(dimension=32, seed=9)
        q = get_provider(p.name)
        assert q.dimension == 32 and np.array_equal(p.embed("x y"), q.embed("x y"))

    def test_get_provider_unknown(self):
        with pytest.raises(IndexError_):
            get_provider("openai-ada-002")


class TestEmbedChunk:
    def test_collinear_title_text(self):
        p = HashedBowProvider()
        rec = embed_chunk(chunk(0, "reset modem", "reset modem"), p)
        e = p.embed("reset modem")
        np.testing.assert_allclose(rec.vector, e / np.linalg.norm(e), atol=1e-12)

    def test_sum_matches_hand_computation(self):
        p = HashedBowProvider()
        rec = embed_chunk(chunk(0, "billing", "late fee"), p)
        expected = p.embed("billing") + p.embed("late fee")
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(rec.vector, expected, atol=1e-12)
        assert abs(np.linalg.norm(rec.vector) - 1.0) < 1e-6

    def test_degenerate_sum_errors(self):
        class NegatingProvider:
            name, dimension = "neg", 4

            def embed(self, text):
                v = np.ones(4)
                return -v if text.startswith("anti") else v

        with pytest.raises(IndexError_, match="degenerate"):
            embed_chunk(chunk(0, "title", "anti-title"), NegatingProvider())


class TestDenseSearch:
    def test_self_similarity_rank_1(self):
        p = HashedBowProvider()
        chunks = [chunk(i, f"topic {i}", f"text about thing {i}") for i in range(5)]
        idx = DenseIndex.build(chunks, p)
        hits = dense_search("topic 3 text about thing 3", idx, 3)
        assert hits[0].chunk_ref == ("d3", 0)

    def test_hand_cosine_order(self):
        p = HashedBowProvider()
        refs = [("a", 0), ("b", 0), ("c", 0)]
        q = p.embed("query text")
        q = q / np.linalg.norm(q)

        def vec_at_cosine(c):
            # unit vector with prescribed cosine against q
            rng = np.random.default_rng(0)
            r = rng.standard_normal(p.dimension)
            r -= (r @ q) * q
            r /= np.linalg.norm(r)
            return c * q + math.sqrt(1 - c * c) * r

        records = [
            VectorRecord(refs[0], vec_at_cosine(0.9), "a"),
            VectorRecord(refs[1], vec_at_cosine(0.2), "b"),
            VectorRecord(refs[2], vec_at_cosine(0.5), "c"),
        ]
        idx = DenseIndex(records, p)
        hits = dense_search("query text", idx, 3)
        assert [h.chunk_ref for h in hits] == [refs[0], refs[2], refs[1]]
        np.testing.assert_allclose([h.score for h in hits], [0.9, 0.5, 0.2], atol=1e-9)

    def test_k_one(self):
        p = HashedBowProvider()
        idx = DenseIndex.build([chunk(i, f"t{i}", f"x{i}") for i in range(4)], p)
        hits = dense_search("t2 x2", idx, 1)
        assert len(hits) == 1 and hits[0].rank == 1

    def test_k_exceeds_size_returns_all(self):
        p = HashedBowProvider()
        idx = DenseIndex.build([chunk(i, f"t{i}", f"x{i}") for i in range(4)], p)
        assert len(dense_search("t0", idx, 99)) == 4

    def test_matches_exhaustive_oracle(self):
        p = HashedBowProvider()
        rng = np.random.default_rng(3)
        chunks = [
            chunk(i, f"title {rng.integers(0, 20)}", " ".join(f"w{rng.integers(0, 50)}" for _ in range(10)))
            for i in range(200)
        ]
        idx = DenseIndex.build(chunks, p)
        query = "title 7 w3 w9"
        hits = dense_search(query, idx, 20)
        qv = p.embed(query)
        qv /= np.linalg.norm(qv)
        oracle = sorted(
            ((c.ref, float(v.vector @ qv)) for c, v in zip(chunks, (embed_chunk(c, p) for c in chunks))),
            key=lambda rs: (-rs[1], rs[0]),
        )[:20]
        assert [h.chunk_ref for h in hits] == [r for r, _ in oracle]
        np.testing.assert_allclose([h.score for h in hits], [s for _, s in oracle], atol=1e-9)

    def test_scores_within_unit_interval(self):
        p = HashedBowProvider()
        idx = DenseIndex.build([chunk(i, f"t{i}", f"body {i}") for i in range(10)], p)
        for h in dense_search("t1 body", idx, 10):
            assert -1.0 - 1e-9 <= h.score <= 1.0 + 1e-9


class TestBm25:
    def test_closed_form_single_doc(self):
        idx = Bm25Index([chunk(0, "", "term")])
        hits = bm25_search("term", idx, 1)
        assert abs(hits[0].score - math.log(4 / 3)) < 1e-6
        assert abs(hits[0].score - 0.287682) < 1e-6

    def test_absent_terms_score_zero(self):
        idx = Bm25Index([chunk(i, "t", "alpha beta") for i in range(3)])
        hits = bm25_search("missingword", idx, 3)
        assert all(h.score == 0.0 for h in hits)

    def test_tf_monotonicity(self):
        docs = [chunk(0, "", "pay pay pay x"), chunk(1, "", "pay y z w")]
        hits = bm25_search("pay", Bm25Index(docs), 2)
        assert hits[0].chunk_ref == ("d0", 0)

    def test_empty_query_errors(self):
        idx = Bm25Index([chunk(0, "t", "x")])
        with pytest.raises(IndexError_, match="empty query"):
            bm25_search("!!!", idx, 1)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        chunks = [
            chunk(i, f"t{rng.integers(0, 5)}", " ".join(f"w{rng.integers(0, 30)}" for _ in range(rng.integers(3, 15))))
            for i in range(300)
        ]
        idx = Bm25Index(chunks)
        for query in ["w1 w2 w3", "t1 w29", "w0 w0 w7"]:
            oracle = brute_force_bm25(chunks, query)
            got = idx.scores(query)
            np.testing.assert_allclose(got, oracle, atol=1e-9)

    def test_tie_break_by_ref(self):
        docs = [chunk(1, "", "pay now"), chunk(0, "", "pay now")]
        hits = bm25_search("pay", Bm25Index(docs), 2)
        assert [h.chunk_ref for h in hits] == [("d0", 0), ("d1", 0)]

    def test_params_validation(self):
        with pytest.raises(IndexError_):
            Bm25Params(k1=-0.1)
        with pytest.raises(IndexError_):
            Bm25Params(b=1.5)


class TestRandomSearch:
    def test_deterministic_per_seed(self):
        p = HashedBowProvider()
        idx = DenseIndex.build([chunk(i, f"t{i}", f"x{i}") for i in range(30)], p)
        assert random_search(idx, 5, seed=3) == random_search(idx, 5, seed=3)

    def test_full_k_is_permutation(self):
        p = HashedBowProvider()
        idx = DenseIndex.build([chunk(i, f"t{i}", f"x{i}") for i in range(12)], p)
        hits = random_search(idx, 12, seed=0)
        assert sorted(h.chunk_ref for h in hits) == sorted(idx.refs)

    def test_rank1_frequency_uniform(self):
        p = HashedBowProvider()
        idx = DenseIndex.build([chunk(i, f"t{i}", f"x{i}") for i in range(100)], p)
        counts = {}
        for s in range(10_000):
            top = random_search(idx, 1, seed=s)[0].chunk_ref
            counts[top] = counts.get(top, 0) + 1
        freqs = np.array([counts.get(r, 0) for r in idx.refs]) / 10_000
        assert np.all(np.abs(freqs - 0.01) <= 0.005)


class TestRelativeDifference:
    def test_arithmetic(self):
        assert relative_difference(0.5, 0.45) == pytest.approx(-10.0)

    def test_identity(self):
        assert relative_difference(0.37, 0.37) == 0.0

    def test_fifteen_percent_convention(self):
        m = 0.412
        assert relative_difference(m, 1.15 * m) == pytest.approx(15.0)

    def test_zero_baseline_errors(self):
        with pytest.raises(IndexError_):
            relative_difference(0.0, 1.0)


class TestSnapshot:
    def test_round_trip(self, tmp_path):
        p = HashedBowProvider()
        chunks = [chunk(i, f"topic {i}", f"body text {i}") for i in range(8)]
        dense = DenseIndex.build(chunks, p)
        save_snapshot(tmp_path / "snap", dense, chunks, Bm25Params())
        chunks2, dense2, bm25_2 = load_snapshot(tmp_path / "snap")
        assert chunks2 == chunks
        np.testing.assert_array_equal(dense2.matrix, dense.matrix)
        assert bm25_search("body 3", bm25_2, 2) == bm25_search("body 3", Bm25Index(chunks), 2)
        assert dense_search("topic 5", dense2, 3) == dense_search("topic 5", dense, 3)
