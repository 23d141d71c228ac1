"""Numba @njit kernel backend.

All kernels are compiled without fastmath so float operations keep IEEE
ordering: given identical inputs the results are bit-reproducible across
runs. nogil lets concurrent searches actually run in parallel under threads.

The BM25 contribution below must keep the exact expression tree used in
`_numpy.topk_bm25` so the two backends agree bitwise.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


# ---------------------------------------------------------------------------
# bounded top-k heap: root = worst kept hit
# (score asc primary, doc rank desc secondary -> pop order is worst-first)
# ---------------------------------------------------------------------------


@njit(**_JIT)
def _worse(s_a, r_a, s_b, r_b):
    if s_a != s_b:
        return s_a < s_b
    return r_a > r_b


@njit(**_JIT)
def _topk_push(h_score, h_rank, h_ord, size, s, r, o):
    j = size
    h_score[j] = s
    h_rank[j] = r
    h_ord[j] = o
    while j > 0:
        p = (j - 1) // 2
        if _worse(h_score[j], h_rank[j], h_score[p], h_rank[p]):
            h_score[j], h_score[p] = h_score[p], h_score[j]
            h_rank[j], h_rank[p] = h_rank[p], h_rank[j]
            h_ord[j], h_ord[p] = h_ord[p], h_ord[j]
            j = p
        else:
            break
    return size + 1


@njit(**_JIT)
def _topk_sift_down(h_score, h_rank, h_ord, size, j):
    while True:
        left = 2 * j + 1
        if left >= size:
            return
        worst = left
        right = left + 1
        if right < size and _worse(h_score[right], h_rank[right], h_score[left], h_rank[left]):
            worst = right
        if _worse(h_score[worst], h_rank[worst], h_score[j], h_rank[j]):
            h_score[j], h_score[worst] = h_score[worst], h_score[j]
            h_rank[j], h_rank[worst] = h_rank[worst], h_rank[j]
            h_ord[j], h_ord[worst] = h_ord[worst], h_ord[j]
            j = worst
        else:
            return


@njit(**_JIT)
def _topk_offer(h_score, h_rank, h_ord, size, k, s, r, o):
    if size < k:
        return _topk_push(h_score, h_rank, h_ord, size, s, r, o)
    if _worse(h_score[0], h_rank[0], s, r):
        h_score[0] = s
        h_rank[0] = r
        h_ord[0] = o
        _topk_sift_down(h_score, h_rank, h_ord, size, 0)
    return size


@njit(**_JIT)
def _topk_drain(h_score, h_rank, h_ord, size):
    """Pop worst-first into arrays filled from the back: output is best-first."""
    out_ord = np.empty(size, dtype=np.int32)
    out_score = np.empty(size, dtype=np.float64)
    n = size
    while n > 0:
        out_ord[n - 1] = h_ord[0]
        out_score[n - 1] = h_score[0]
        n -= 1
        h_score[0] = h_score[n]
        h_rank[0] = h_rank[n]
        h_ord[0] = h_ord[n]
        _topk_sift_down(h_score, h_rank, h_ord, n, 0)
    return out_ord, out_score


# ---------------------------------------------------------------------------
# sparse scoring: document-at-a-time merge over posting cursors
# ---------------------------------------------------------------------------


@njit(**_JIT)
def topk_impact(starts, ends, ordinals, impacts, qweights, doc_rank, n_docs, k):
    n_terms = len(starts)
    cursors = starts.copy()
    h_score = np.empty(k, dtype=np.float64)
    h_rank = np.empty(k, dtype=np.int32)
    h_ord = np.empty(k, dtype=np.int32)
    size = 0
    while True:
        d = np.int64(n_docs)
        for t in range(n_terms):
            c = cursors[t]
            if c < ends[t] and ordinals[c] < d:
                d = np.int64(ordinals[c])
        if d >= n_docs:
            break
        score = 0.0
        for t in range(n_terms):
            c = cursors[t]
            if c < ends[t] and ordinals[c] == d:
                score += qweights[t] * np.float64(impacts[c])
                cursors[t] = c + 1
        size = _topk_offer(h_score, h_rank, h_ord, size, k, score, doc_rank[d], np.int32(d))
    return _topk_drain(h_score, h_rank, h_ord, size)


@njit(**_JIT)
def topk_bm25(starts, ends, ordinals, tfs, idf, qtf, doc_len, avg_len, k1, b, doc_rank, n_docs, k):
    n_terms = len(starts)
    cursors = starts.copy()
    h_score = np.empty(k, dtype=np.float64)
    h_rank = np.empty(k, dtype=np.int32)
    h_ord = np.empty(k, dtype=np.int32)
    size = 0
    while True:
        d = np.int64(n_docs)
        for t in range(n_terms):
            c = cursors[t]
            if c < ends[t] and ordinals[c] < d:
                d = np.int64(ordinals[c])
        if d >= n_docs:
            break
        score = 0.0
        for t in range(n_terms):
            c = cursors[t]
            if c < ends[t] and ordinals[c] == d:
                tf = np.float64(tfs[c])
                sat = (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * np.float64(doc_len[d]) / avg_len))
                score += qtf[t] * (idf[t] * sat)
                cursors[t] = c + 1
        size = _topk_offer(h_score, h_rank, h_ord, size, k, score, doc_rank[d], np.int32(d))
    return _topk_drain(h_score, h_rank, h_ord, size)


# ---------------------------------------------------------------------------
# HNSW
# ---------------------------------------------------------------------------


@njit(**_JIT)
def _dot(vecs, i, q):
    s = 0.0
    for j in range(q.shape[0]):
        s += vecs[i, j] * q[j]
    return s


@njit(**_JIT)
def dot_scores(vecs, q):
    """Same accumulation order as the in-graph _dot, so flat and HNSW scores
    for one document are bit-identical under this backend."""
    out = np.empty(vecs.shape[0], dtype=np.float64)
    for i in range(vecs.shape[0]):
        out[i] = _dot(vecs, i, q)
    return out


@njit(**_JIT)
def _greedy_closest(vecs, adj, deg, layer, start, q):
    cur = start
    cur_sim = _dot(vecs, cur, q)
    while True:
        best = cur
        best_sim = cur_sim
        for j in range(deg[layer, cur]):
            cand = adj[layer, cur, j]
            s = _dot(vecs, cand, q)
            if s > best_sim:
                best = cand
                best_sim = s
        if best == cur:
            return cur
        cur = best
        cur_sim = best_sim


# min-heaps on parallel (key, id) arrays; used both ways by negating keys


@njit(**_JIT)
def _heap_push(keys, ids, size, key, ident):
    j = size
    keys[j] = key
    ids[j] = ident
    while j > 0:
        p = (j - 1) // 2
        if keys[j] < keys[p]:
            keys[j], keys[p] = keys[p], keys[j]
            ids[j], ids[p] = ids[p], ids[j]
            j = p
        else:
            break
    return size + 1


@njit(**_JIT)
def _heap_pop(keys, ids, size):
    key = keys[0]
    ident = ids[0]
    size -= 1
    keys[0] = keys[size]
    ids[0] = ids[size]
    j = 0
    while True:
        left = 2 * j + 1
        if left >= size:
            break
        small = left
        right = left + 1
        if right < size and keys[right] < keys[left]:
            small = right
        if keys[small] < keys[j]:
            keys[j], keys[small] = keys[small], keys[j]
            ids[j], ids[small] = ids[small], ids[j]
            j = small
        else:
            break
    return key, ident, size


@njit(**_JIT)
def _search_layer(vecs, adj, deg, layer, ep, q, ef):
    """Beam search on one layer. Returns (ids, sims) sorted by sim desc."""
    cap = vecs.shape[0]
    visited = np.zeros(cap, dtype=np.uint8)
    cand_keys = np.empty(cap + 1, dtype=np.float64)  # holds -sim (max-heap by sim)
    cand_ids = np.empty(cap + 1, dtype=np.int32)
    res_keys = np.empty(ef + 1, dtype=np.float64)  # holds sim (min-heap: worst on top)
    res_ids = np.empty(ef + 1, dtype=np.int32)

    visited[ep] = 1
    sim0 = _dot(vecs, ep, q)
    cand_size = _heap_push(cand_keys, cand_ids, 0, -sim0, np.int32(ep))
    res_size = _heap_push(res_keys, res_ids, 0, sim0, np.int32(ep))

    while cand_size > 0:
        neg_sim, cid, cand_size = _heap_pop(cand_keys, cand_ids, cand_size)
        if res_size >= ef and -neg_sim < res_keys[0]:
            break
        for j in range(deg[layer, cid]):
            nb = adj[layer, cid, j]
            if visited[nb]:
                continue
            visited[nb] = 1
            s = _dot(vecs, nb, q)
            if res_size < ef or s > res_keys[0]:
                cand_size = _heap_push(cand_keys, cand_ids, cand_size, -s, nb)
                res_size = _heap_push(res_keys, res_ids, res_size, s, nb)
                if res_size > ef:
                    _, _, res_size = _heap_pop(res_keys, res_ids, res_size)

    out_ids = np.empty(res_size, dtype=np.int32)
    out_sims = np.empty(res_size, dtype=np.float64)
    n = res_size
    while n > 0:
        s, ident, n = _heap_pop(res_keys, res_ids, n)
        out_ids[n] = ident
        out_sims[n] = s
    return out_ids, out_sims


@njit(**_JIT)
def _select_heuristic(vecs, qvec, cand_ids, cand_sims, count, m, out):
    """Keep candidates (sim-desc order) strictly closer to qvec than to any kept one."""
    nsel = 0
    for idx in range(count):
        if nsel == m:
            break
        c = cand_ids[idx]
        sim_to_q = cand_sims[idx]
        keep = True
        for r in range(nsel):
            s = 0.0
            for j in range(qvec.shape[0]):
                s += vecs[c, j] * vecs[out[r], j]
            if s > sim_to_q:
                keep = False
                break
        if keep:
            out[nsel] = c
            nsel += 1
    return nsel


@njit(**_JIT)
def hnsw_insert(vecs, adj, deg, i, level, entry, max_level, m, ef_construction):
    """Wire node i (vector already stored at vecs[i]) into the graph."""
    if max_level < 0:
        return i, level
    q = vecs[i]
    ep = np.int64(entry)
    for lc in range(max_level, level, -1):
        ep = np.int64(_greedy_closest(vecs, adj, deg, lc, ep, q))

    mmax_width = adj.shape[2]
    selected = np.empty(mmax_width + 1, dtype=np.int32)
    scratch_ids = np.empty(mmax_width + 1, dtype=np.int32)
    scratch_sims = np.empty(mmax_width + 1, dtype=np.float64)
    scratch_out = np.empty(mmax_width + 1, dtype=np.int32)

    top = min(level, max_level)
    for lc in range(top, -1, -1):
        ids, sims = _search_layer(vecs, adj, deg, lc, ep, q, ef_construction)
        # layer 0 links the new node up to its full 2M degree bound
        mmax = 2 * m if lc == 0 else m
        nsel = _select_heuristic(vecs, q, ids, sims, len(ids), mmax, selected)
        deg[lc, i] = nsel
        for j in range(nsel):
            adj[lc, i, j] = selected[j]
        for j in range(nsel):
            nb = selected[j]
            dn = deg[lc, nb]
            if dn < mmax:
                adj[lc, nb, dn] = i
                deg[lc, nb] = dn + 1
            else:
                # re-select nb's neighbor list from existing + i
                total = dn + 1
                for x in range(dn):
                    scratch_ids[x] = adj[lc, nb, x]
                scratch_ids[dn] = np.int32(i)
                for x in range(total):
                    scratch_sims[x] = _dot(vecs, scratch_ids[x], vecs[nb])
                # insertion sort by (sim desc, id asc): deterministic near float ties
                for x in range(1, total):
                    ks = scratch_sims[x]
                    ki = scratch_ids[x]
                    y = x - 1
                    while y >= 0 and (scratch_sims[y] < ks or (scratch_sims[y] == ks and scratch_ids[y] > ki)):
                        scratch_sims[y + 1] = scratch_sims[y]
                        scratch_ids[y + 1] = scratch_ids[y]
                        y -= 1
                    scratch_sims[y + 1] = ks
                    scratch_ids[y + 1] = ki
                nkeep = _select_heuristic(vecs, vecs[nb], scratch_ids, scratch_sims, total, mmax, scratch_out)
                deg[lc, nb] = nkeep
                for x in range(nkeep):
                    adj[lc, nb, x] = scratch_out[x]
        if nsel > 0:
            ep = np.int64(selected[0])

    if level > max_level:
        return i, level
    return np.int64(entry), np.int64(max_level)


@njit(**_JIT)
def hnsw_search(vecs, adj, deg, n, entry, max_level, q, ef):
    """Descend to layer 0 then beam-search; returns (ids, sims) sim-desc."""
    if n == 0:
        return np.empty(0, dtype=np.int32), np.empty(0, dtype=np.float64)
    ep = np.int64(entry)
    for lc in range(max_level, 0, -1):
        ep = np.int64(_greedy_closest(vecs, adj, deg, lc, ep, q))
    return _search_layer(vecs, adj, deg, 0, ep, q, ef)
