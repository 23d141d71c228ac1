"""Pure numpy/python kernel backend.

Sparse scoring uses a term-at-a-time accumulator. Per document the float
additions happen in the same query-term order as the numba DAAT merge, and
each per-term contribution is computed with the same expression tree, so
scores are bit-identical across backends.

HNSW search/insert follow the same algorithm as the numba backend but batch
distance computations through BLAS.
"""

from __future__ import annotations

import heapq

import numpy as np


# ---------------------------------------------------------------------------
# sparse scoring
# ---------------------------------------------------------------------------


def _select_topk(acc: np.ndarray, doc_rank: np.ndarray, k: int):
    """Top-k over an accumulator: score desc, lexicographic doc rank on ties."""
    nz = np.flatnonzero(acc)
    if nz.size == 0:
        return np.empty(0, dtype=np.int32), np.empty(0, dtype=np.float64)
    scores = acc[nz]
    order = np.lexsort((doc_rank[nz], -scores))[:k]
    picked = nz[order]
    return picked.astype(np.int32), scores[order]


def topk_impact(starts, ends, ordinals, impacts, qweights, doc_rank, n_docs, k):
    """Exact top-k by sum of (query impact x doc impact) over matching terms."""
    acc = np.zeros(n_docs, dtype=np.float64)
    for t in range(len(starts)):
        s, e = starts[t], ends[t]
        if s == e:
            continue
        # ordinals are unique within one term, so fancy-index += is safe
        acc[ordinals[s:e]] += qweights[t] * impacts[s:e].astype(np.float64)
    return _select_topk(acc, doc_rank, k)


def topk_bm25(starts, ends, ordinals, tfs, idf, qtf, doc_len, avg_len, k1, b, doc_rank, n_docs, k):
    """Exact top-k by summed BM25 contributions over matching terms."""
    acc = np.zeros(n_docs, dtype=np.float64)
    for t in range(len(starts)):
        s, e = starts[t], ends[t]
        if s == e:
            continue
        ords = ordinals[s:e]
        tf = tfs[s:e].astype(np.float64)
        # keep this expression tree identical to the numba backend / bm25_score
        sat = (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * doc_len[ords].astype(np.float64) / avg_len))
        acc[ords] += qtf[t] * (idf[t] * sat)
    return _select_topk(acc, doc_rank, k)


# ---------------------------------------------------------------------------
# HNSW
# ---------------------------------------------------------------------------


def dot_scores(vecs, q):
    """Scores of q against every row; the flat index scores through this."""
    return vecs @ q


def _greedy_closest(vecs, adj, deg, layer, start, q):
    cur = int(start)
    cur_sim = float(vecs[cur] @ q)
    while True:
        d = int(deg[layer, cur])
        if d == 0:
            return cur, cur_sim
        nbrs = adj[layer, cur, :d]
        sims = vecs[nbrs] @ q
        j = int(np.argmax(sims))
        if sims[j] > cur_sim:
            cur = int(nbrs[j])
            cur_sim = float(sims[j])
        else:
            return cur, cur_sim


def _search_layer(vecs, adj, deg, layer, ep, q, ef):
    """Beam search on one layer; returns [(sim, id)] sorted by sim desc."""
    visited = np.zeros(vecs.shape[0], dtype=bool)
    visited[ep] = True
    sim0 = float(vecs[ep] @ q)
    candidates = [(-sim0, int(ep))]  # max-heap by sim
    result = [(sim0, int(ep))]  # min-heap by sim (worst kept on top)
    heappush, heappop = heapq.heappush, heapq.heappop
    while candidates:
        neg_sim, cid = heappop(candidates)
        if len(result) >= ef and -neg_sim < result[0][0]:
            break
        d = int(deg[layer, cid])
        if d == 0:
            continue
        nbrs = adj[layer, cid, :d]
        fresh = nbrs[~visited[nbrs]]
        if fresh.size == 0:
            continue
        visited[fresh] = True
        sims = vecs[fresh] @ q
        if len(result) >= ef:
            # pre-filter on the current bar; the per-item check still applies
            # as pushes raise it, so the kept set is unchanged
            above = sims > result[0][0]
            fresh = fresh[above]
            sims = sims[above]
        for nb, s in zip(fresh.tolist(), sims.tolist()):
            if len(result) < ef or s > result[0][0]:
                heappush(candidates, (-s, nb))
                heappush(result, (s, nb))
                if len(result) > ef:
                    heappop(result)
    return sorted(result, key=lambda p: -p[0])


def _select_heuristic(vecs, qvec, cand, m):
    """Keep candidates closer to qvec than to anything already kept.

    `cand` is [(sim_to_q, id)] sorted by sim desc; mirrors the numba backend
    (and hnswlib): drop c only when strictly closer to a kept neighbor.
    """
    selected: list[int] = []
    for sim_to_q, c in cand:
        if len(selected) == m:
            break
        if selected and (vecs[selected] @ vecs[c] > sim_to_q).any():
            continue
        selected.append(c)
    return selected


def hnsw_insert(vecs, adj, deg, i, level, entry, max_level, m, ef_construction):
    """Wire node i (vector already stored at vecs[i]) into the graph."""
    if max_level < 0:
        return i, level
    q = vecs[i]
    ep = int(entry)
    for lc in range(max_level, level, -1):
        ep, _ = _greedy_closest(vecs, adj, deg, lc, ep, q)
    for lc in range(min(level, max_level), -1, -1):
        cand = _search_layer(vecs, adj, deg, lc, ep, q, ef_construction)
        # layer 0 links the new node up to its full 2M degree bound
        mmax = 2 * m if lc == 0 else m
        selected = _select_heuristic(vecs, q, cand, mmax)
        deg[lc, i] = len(selected)
        adj[lc, i, : len(selected)] = selected
        for nb in selected:
            dn = int(deg[lc, nb])
            if dn < mmax:
                adj[lc, nb, dn] = i
                deg[lc, nb] = dn + 1
            else:
                ids = np.empty(dn + 1, dtype=np.int64)
                ids[:dn] = adj[lc, nb, :dn]
                ids[dn] = i
                sims = vecs[ids] @ vecs[nb]
                ranked = sorted(zip(sims, ids), key=lambda p: (-p[0], p[1]))
                kept = _select_heuristic(vecs, vecs[nb], [(float(s), int(c)) for s, c in ranked], mmax)
                deg[lc, nb] = len(kept)
                adj[lc, nb, : len(kept)] = kept
        if selected:
            ep = selected[0]
    if level > max_level:
        return i, level
    return int(entry), int(max_level)


def hnsw_search(vecs, adj, deg, n, entry, max_level, q, ef):
    """Descend to layer 0 then beam-search; returns (ids, sims) sim-desc."""
    if n == 0:
        return np.empty(0, dtype=np.int32), np.empty(0, dtype=np.float64)
    ep = int(entry)
    for lc in range(max_level, 0, -1):
        ep, _ = _greedy_closest(vecs, adj, deg, lc, ep, q)
    found = _search_layer(vecs, adj, deg, 0, ep, q, ef)
    ids = np.fromiter((c for _, c in found), dtype=np.int32, count=len(found))
    sims = np.fromiter((s for s, _ in found), dtype=np.float64, count=len(found))
    return ids, sims
