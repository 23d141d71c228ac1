"""Combine a dense run and a sparse run by averaging min-max-normalized scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .model import ScoredHit

logger = logging.getLogger(__name__)

DEFAULT_FUSE_DEPTH = 1000


@dataclass
class Run:
    """Per-query ranked hit lists, the TREC exchange unit."""

    run_tag: str
    hits: dict[str, list[ScoredHit]] = field(default_factory=dict)

    def add(self, query_id: str, hits: list[ScoredHit]) -> None:
        if query_id in self.hits:
            raise ValueError(f"query {query_id!r} already present in run")
        seen = {h.doc_id for h in hits}
        if len(seen) != len(hits):
            raise ValueError(f"query {query_id!r}: duplicate doc_id in hit list")
        self.hits[query_id] = hits

    def query_ids(self) -> list[str]:
        return list(self.hits.keys())

    def __len__(self) -> int:
        return len(self.hits)


def min_max_normalize(hits: list[ScoredHit]) -> list[ScoredHit]:
    """Map scores to (s - min) / (max - min), order unchanged.

    A constant list (max == min) maps to all 1.0.
    """
    if not hits:
        raise ValueError("cannot normalize an empty hit list")
    scores = [h.score for h in hits]
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return [ScoredHit(h.doc_id, 1.0, h.rank) for h in hits]
    span = hi - lo
    return [ScoredHit(h.doc_id, (h.score - lo) / span, h.rank) for h in hits]


def average_fuse(run_a: Run, run_b: Run, depth: int = DEFAULT_FUSE_DEPTH, run_tag: str = "fusion") -> Run:
    """Per query: truncate both sides to `depth`, min-max normalize each,
    average (missing side contributes 0), re-rank, truncate to `depth`."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    fused = Run(run_tag)
    queries = sorted(set(run_a.hits) | set(run_b.hits))
    for qid in queries:
        side_a = run_a.hits.get(qid)
        side_b = run_b.hits.get(qid)
        if side_a is None or side_b is None:
            missing = run_a.run_tag if side_a is None else run_b.run_tag
            logger.warning("query %s missing from run %r; fusing against empty side", qid, missing)
        norm_a = {h.doc_id: h.score for h in min_max_normalize(side_a[:depth])} if side_a else {}
        norm_b = {h.doc_id: h.score for h in min_max_normalize(side_b[:depth])} if side_b else {}
        combined = [
            (doc_id, (norm_a.get(doc_id, 0.0) + norm_b.get(doc_id, 0.0)) / 2.0)
            for doc_id in set(norm_a) | set(norm_b)
        ]
        combined.sort(key=lambda p: (-p[1], p[0]))
        fused.add(
            qid,
            [ScoredHit(d, s, r + 1) for r, (d, s) in enumerate(combined[:depth])],
        )
    return fused
