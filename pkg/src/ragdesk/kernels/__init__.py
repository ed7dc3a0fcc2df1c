"""Scoring kernels: compiled extension when available, numpy fallback otherwise.

Both backends implement the same two functions with identical accumulation
order, so scores agree to floating-point noise:

    cosine_scores(matrix, query) -> scores
    bm25_scores(doc_ids, tfs, offsets, idf, doc_len, avgdl, k1, b, n_docs) -> scores
"""
try:
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:  # extension not built; pure-python path
    from . import _kernels_py as _impl

    BACKEND = "python"

cosine_scores = _impl.cosine_scores
bm25_scores = _impl.bm25_scores

__all__ = ["cosine_scores", "bm25_scores", "BACKEND"]
