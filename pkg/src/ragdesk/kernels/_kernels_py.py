"""Pure-numpy scoring kernels; reference fallback for the compiled extension."""
import numpy as np


def cosine_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Dot products of unit-norm rows against a unit-norm query vector."""
    return matrix @ query


def bm25_scores(
    doc_ids: np.ndarray,
    tfs: np.ndarray,
    offsets: np.ndarray,
    idf: np.ndarray,
    doc_len: np.ndarray,
    avgdl: float,
    k1: float,
    b: float,
    n_docs: int,
) -> np.ndarray:
    """Accumulate Okapi BM25 scores over per-query-term posting slices.

    Postings for query term t live in doc_ids[offsets[t]:offsets[t+1]] with
    matching term frequencies in tfs; idf[t] is the term's IDF.
    """
    scores = np.zeros(n_docs)
    norm = k1 * (1.0 - b + b * doc_len / avgdl)
    for t in range(len(idf)):
        lo, hi = offsets[t], offsets[t + 1]
        ids = doc_ids[lo:hi]
        tf = tfs[lo:hi]
        scores[ids] += idf[t] * tf * (k1 + 1.0) / (tf + norm[ids])
    return scores
