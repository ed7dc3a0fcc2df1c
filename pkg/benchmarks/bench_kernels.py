"""Compare the compiled scoring kernels against the pure-Python/numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--n-chunks 20000] [--dim 64] [--repeats 5]
"""
import argparse
import importlib
import time

import numpy as np

from ragdesk.kernels import BACKEND


def load_backends():
    backends = {}
    py = importlib.import_module("ragdesk.kernels._kernels_py")
    backends["python"] = py
    try:
        cy = importlib.import_module("ragdesk.kernels._kernels")
        backends["cython"] = cy
    except ImportError:
        pass
    return backends


def make_dense_problem(rng, n_chunks, dim):
    matrix = rng.standard_normal((n_chunks, dim))
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    query = rng.standard_normal(dim)
    query /= np.linalg.norm(query)
    return matrix, query


def make_bm25_problem(rng, n_chunks, n_terms=8, vocab=5000):
    doc_len = rng.integers(20, 200, size=n_chunks).astype(np.float64)
    avgdl = float(doc_len.mean())
    doc_ids_parts, tfs_parts, offsets, idf = [], [], [0], []
    for _ in range(n_terms):
        df = int(rng.integers(50, n_chunks // 2))
        ids = np.sort(rng.choice(n_chunks, size=df, replace=False)).astype(np.int64)
        doc_ids_parts.append(ids)
        tfs_parts.append(rng.integers(1, 6, size=df).astype(np.float64))
        offsets.append(offsets[-1] + df)
        idf.append(float(np.log(1 + (n_chunks - df + 0.5) / (df + 0.5))))
    return (
        np.concatenate(doc_ids_parts),
        np.concatenate(tfs_parts),
        np.array(offsets, dtype=np.int64),
        np.array(idf, dtype=np.float64),
        doc_len,
        avgdl,
    )


def bench(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n-chunks", type=int, default=20_000)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    backends = load_backends()
    print(f"active backend at import: {BACKEND}")
    print(f"problem size: {args.n_chunks} chunks, dim {args.dim}\n")

    matrix, query = make_dense_problem(rng, args.n_chunks, args.dim)
    bm25_args = make_bm25_problem(rng, args.n_chunks)

    results = {}
    for name, mod in backends.items():
        cos = bench(lambda: mod.cosine_scores(matrix, query), args.repeats)
        bm = bench(
            lambda: mod.bm25_scores(*bm25_args, 1.0, 0.5, args.n_chunks), args.repeats
        )
        results[name] = (cos, bm)
        print(f"{name:>8}  cosine: {cos * 1000:8.3f} ms   bm25: {bm * 1000:8.3f} ms")

    if "cython" in results and "python" in results:
        cs = results["python"][0] / results["cython"][0]
        bs = results["python"][1] / results["cython"][1]
        print(f"\nspeedup (python/cython): cosine {cs:.2f}x, bm25 {bs:.2f}x")

        out_c = backends["cython"].cosine_scores(matrix, query)
        out_p = backends["python"].cosine_scores(matrix, query)
        assert np.max(np.abs(out_c - out_p)) < 1e-12
        out_c = backends["cython"].bm25_scores(*bm25_args, 1.0, 0.5, args.n_chunks)
        out_p = backends["python"].bm25_scores(*bm25_args, 1.0, 0.5, args.n_chunks)
        assert np.max(np.abs(out_c - out_p)) < 1e-12
        print("parity check: backends agree within 1e-12")
    else:
        print("\ncompiled backend unavailable; only the fallback was measured")


if __name__ == "__main__":
    main()
