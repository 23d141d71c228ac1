"""TREC-format run/qrels I/O and the four effectiveness metrics.

Conventions follow trec_eval with judged-query completion: queries present
in the qrels but absent from the run score 0; queries with no relevant
documents (or zero ideal DCG) are excluded from the affected metric's mean;
run-only queries are ignored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .fusion import Run
from .model import ScoredHit
from .storage import atomic_write

logger = logging.getLogger(__name__)

Qrels = dict[str, dict[str, int]]

DEFAULT_REL_THRESHOLD = 1


def parse_run(path) -> Run:
    """Read `qid Q0 docid rank score tag` lines; hits are re-sorted by score."""
    per_query: dict[str, list[tuple[str, float, int]]] = {}
    seen: set[tuple[str, str]] = set()
    tag = "unknown"
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            qid, _, doc_id, rank_s, score_s, tag = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: bad rank/score: {e}") from e
            if (qid, doc_id) in seen:
                raise ValueError(f"{path}:{lineno}: duplicate doc {doc_id!r} for query {qid!r}")
            seen.add((qid, doc_id))
            per_query.setdefault(qid, []).append((doc_id, score, rank))
    run = Run(tag)
    for qid, rows in per_query.items():
        ordered = sorted(rows, key=lambda r: (-r[1], r[0]))
        if [r[2] for r in ordered] != list(range(1, len(ordered) + 1)):
            logger.warning("run %s query %s: stored ranks disagree with scores; re-ranked", path, qid)
        run.add(qid, [ScoredHit(d, s, i + 1) for i, (d, s, _) in enumerate(ordered)])
    return run


def write_run(run: Run, path) -> None:
    """Write TREC format; scores carry 6 significant digits."""
    with atomic_write(path) as fh:
        for qid in run.hits:
            for hit in run.hits[qid]:
                line = f"{qid} Q0 {hit.doc_id} {hit.rank} {hit.score:.6g} {run.run_tag}\n"
                fh.write(line.encode("utf-8"))


def parse_qrels(path) -> Qrels:
    """Read `qid 0 docid grade` lines."""
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            qid, _, doc_id, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: bad grade: {e}") from e
            if grade < 0:
                raise ValueError(f"{path}:{lineno}: negative grade {grade}")
            qrels.setdefault(qid, {})[doc_id] = grade
    return qrels


def write_qrels(qrels: Qrels, path) -> None:
    with atomic_write(path) as fh:
        for qid in qrels:
            for doc_id, grade in qrels[qid].items():
                fh.write(f"{qid} 0 {doc_id} {grade}\n".encode("utf-8"))


# -- per-query metrics (None = query excluded from the mean) -----------------


def recip_rank(
    hits: list[ScoredHit],
    qrels_q: dict[str, int],
    cutoff: int = 10,
    rel_threshold: int = DEFAULT_REL_THRESHOLD,
) -> float | None:
    if not any(g >= rel_threshold for g in qrels_q.values()):
        return None
    for hit in hits[:cutoff]:
        if qrels_q.get(hit.doc_id, 0) >= rel_threshold:
            return 1.0 / hit.rank
    return 0.0


def average_precision(
    hits: list[ScoredHit],
    qrels_q: dict[str, int],
    depth: int = 1000,
    rel_threshold: int = DEFAULT_REL_THRESHOLD,
) -> float | None:
    total_relevant = sum(1 for g in qrels_q.values() if g >= rel_threshold)
    if total_relevant == 0:
        return None
    found = 0
    precision_sum = 0.0
    for i, hit in enumerate(hits[:depth], start=1):
        if qrels_q.get(hit.doc_id, 0) >= rel_threshold:
            found += 1
            precision_sum += found / i
    return precision_sum / total_relevant


def ndcg_at(hits: list[ScoredHit], qrels_q: dict[str, int], k: int = 10) -> float | None:
    """Gain 2^grade - 1 with log2(rank+1) discount; ideal from grades sorted desc."""
    ideal = sorted(qrels_q.values(), reverse=True)[:k]
    idcg = sum((2**g - 1) / math.log2(i + 2) for i, g in enumerate(ideal))
    if idcg == 0:
        return None
    dcg = sum(
        (2 ** qrels_q.get(hit.doc_id, 0) - 1) / math.log2(i + 2)
        for i, hit in enumerate(hits[:k])
    )
    return dcg / idcg


def recall_at(
    hits: list[ScoredHit],
    qrels_q: dict[str, int],
    k: int = 1000,
    rel_threshold: int = DEFAULT_REL_THRESHOLD,
) -> float | None:
    relevant = {d for d, g in qrels_q.items() if g >= rel_threshold}
    if not relevant:
        return None
    retrieved = {hit.doc_id for hit in hits[:k]}
    return len(relevant & retrieved) / len(relevant)


@dataclass
class MetricReport:
    """Per-query metric values plus the mean over evaluated queries."""

    per_query: dict[str, dict[str, float]] = field(default_factory=dict)
    mean: dict[str, float] = field(default_factory=dict)
    evaluated: dict[str, int] = field(default_factory=dict)

    @property
    def metric_names(self) -> list[str]:
        return list(self.mean.keys())


def _depth_label(depth: int) -> str:
    return f"{depth // 1000}k" if depth % 1000 == 0 and depth >= 1000 else str(depth)


def evaluate(
    run: Run,
    qrels: Qrels,
    rel_threshold: int = DEFAULT_REL_THRESHOLD,
    rr_cutoff: int = 10,
    ap_depth: int = 1000,
    ndcg_cutoff: int = 10,
    recall_depth: int = 1000,
) -> MetricReport:
    """Score every query present in the qrels; absent-from-run queries score 0."""
    overlap = set(run.hits) & set(qrels)
    if not overlap:
        raise ValueError("no overlapping queries between run and qrels")
    names = {
        "rr": f"RR@{rr_cutoff}",
        "ap": "AP",
        "ndcg": f"nDCG@{ndcg_cutoff}",
        "recall": f"R@{_depth_label(recall_depth)}",
    }
    report = MetricReport(per_query={v: {} for v in names.values()})
    for qid in sorted(qrels):
        hits = run.hits.get(qid, [])
        values = {
            names["rr"]: recip_rank(hits, qrels[qid], rr_cutoff, rel_threshold),
            names["ap"]: average_precision(hits, qrels[qid], ap_depth, rel_threshold),
            names["ndcg"]: ndcg_at(hits, qrels[qid], ndcg_cutoff),
            names["recall"]: recall_at(hits, qrels[qid], recall_depth, rel_threshold),
        }
        for name, value in values.items():
            if value is not None:
                report.per_query[name][qid] = value
    for name, per_query in report.per_query.items():
        report.evaluated[name] = len(per_query)
        report.mean[name] = (
            sum(per_query.values()) / len(per_query) if per_query else 0.0
        )
    return report
