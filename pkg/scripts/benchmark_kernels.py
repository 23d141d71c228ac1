#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times three hot paths on synthetic data at a configurable scale:
  1. impact-index top-k (document-at-a-time vs accumulator)
  2. bm25 top-k
  3. HNSW build + search

Usage:
    python scripts/benchmark_kernels.py [--docs N] [--dim D] [--queries Q]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lodestone import kernels
from lodestone.dense import FlatIndex, HnswGraph
from lodestone.model import SparseVector
from lodestone.sparse import build_bm25_index, build_impact_index


def time_queries(fn, queries, repeat=1):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for q in queries:
            fn(q)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_sparse(n_docs, n_queries, k):
    rng = np.random.default_rng(7)
    vocab = [f"t{i:04d}" for i in range(2000)]
    corpus = []
    for i in range(n_docs):
        terms = rng.choice(len(vocab), size=24, replace=False)
        corpus.append((f"d{i:06d}", SparseVector({vocab[t]: float(rng.uniform(0.05, 3)) for t in terms})))
    index = build_impact_index(corpus, scale=100)
    text_index = build_bm25_index(
        (f"x{i:06d}", list(rng.choice(vocab[:300], size=int(rng.integers(5, 60)))))
        for i in range(n_docs)
    )
    queries = []
    for _ in range(n_queries):
        terms = rng.choice(len(vocab), size=6, replace=False)
        queries.append(SparseVector({vocab[t]: float(rng.uniform(0.1, 2)) for t in terms}))
    token_queries = [list(rng.choice(vocab[:300], size=5)) for _ in range(n_queries)]

    results = {}
    reference = None
    for backend in ("numba", "numpy"):
        try:
            kernels.set_backend(backend)
        except ImportError:
            print(f"  {backend}: unavailable, skipped")
            continue
        index.search(queries[0], k)  # JIT warm-up
        impact_s = time_queries(lambda q: index.search(q, k), queries)
        bm25_s = time_queries(lambda q: text_index.search(q, k), token_queries)
        results[backend] = (impact_s, bm25_s)
        got = [[(h.doc_id, h.score) for h in index.search(q, k)] for q in queries[:5]]
        if reference is None:
            reference = got
        else:
            print(f"  agreement with first backend: {'bitwise' if got == reference else 'MISMATCH'}")
    return results


def bench_dense(n_docs, dim, n_queries, k, m=16, efc=100, ef_search=100):
    rng = np.random.default_rng(3)
    data = rng.standard_normal((n_docs, dim))
    queries = rng.standard_normal((n_queries, dim))
    results = {}
    for backend in ("numba", "numpy"):
        try:
            kernels.set_backend(backend)
        except ImportError:
            continue
        warm = HnswGraph(dim, m=4, ef_construction=8, seed=0)
        warm.insert("w", data[0])
        warm.search(queries[0], 1, ef_search=2)
        t0 = time.perf_counter()
        graph = HnswGraph(dim, m=m, ef_construction=efc, seed=1)
        for i in range(n_docs):
            graph.insert(f"d{i:06d}", data[i])
        build_s = time.perf_counter() - t0
        search_s = time_queries(lambda q: graph.search(q, k, ef_search=ef_search), queries)
        flat = FlatIndex(dim)
        for i in range(n_docs):
            flat.add(f"d{i:06d}", data[i])
        recall = 0.0
        for q in queries:
            approx = {h.doc_id for h in graph.search(q, k, ef_search=ef_search)}
            exact = {h.doc_id for h in flat.search(q, k)}
            recall += len(approx & exact) / k
        results[backend] = (build_s, search_s, recall / n_queries)
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--docs", type=int, default=20000, help="documents per index")
    parser.add_argument("--dim", type=int, default=64, help="dense vector dimension")
    parser.add_argument("--queries", type=int, default=200, help="queries per timing loop")
    parser.add_argument("--k", type=int, default=100, help="hits per query")
    args = parser.parse_args()

    print(f"sparse: {args.docs} docs, {args.queries} queries, k={args.k}")
    sparse = bench_sparse(args.docs, args.queries, args.k)
    for backend, (impact_s, bm25_s) in sparse.items():
        print(f"  {backend:>6}: impact {args.queries/impact_s:8.0f} q/s   bm25 {args.queries/bm25_s:8.0f} q/s")
    if len(sparse) == 2:
        si, sb = (sparse["numpy"][0] / sparse["numba"][0], sparse["numpy"][1] / sparse["numba"][1])
        print(f"  numba speedup: impact {si:.1f}x, bm25 {sb:.1f}x")

    n_dense = min(args.docs, 10000)
    print(f"\ndense: {n_dense} vectors dim {args.dim}, M=16 efC=100, ef=100, k=10")
    dense = bench_dense(n_dense, args.dim, min(args.queries, 100), 10)
    for backend, (build_s, search_s, recall) in dense.items():
        qps = min(args.queries, 100) / search_s
        print(f"  {backend:>6}: build {build_s:7.1f}s   search {qps:8.0f} q/s   recall@10 {recall:.3f}")
    if len(dense) == 2:
        print(
            f"  numba speedup: build {dense['numpy'][0]/dense['numba'][0]:.1f}x, "
            f"search {dense['numpy'][1]/dense['numba'][1]:.1f}x"
        )


if __name__ == "__main__":
    main()
