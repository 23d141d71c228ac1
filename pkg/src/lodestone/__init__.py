"""lodestone: one minimal stack for dense, sparse, and BM25 top-k retrieval."""

from .bench import BenchConfig, ThroughputReport, ci95, run_benchmark
from .dense import AuditReport, FlatIndex, HnswGraph, flat_search
from .encoding import LookupEncoder, QueryEncoder, RuntimeEncoder, Vocab, load_lookup, tokenize
from .evaluation import (
    MetricReport,
    average_precision,
    evaluate,
    ndcg_at,
    parse_qrels,
    parse_run,
    recall_at,
    recip_rank,
    write_run,
)
from .fusion import Run, average_fuse, min_max_normalize
from .model import (
    DenseVector,
    QuantizedSparseVector,
    ScoredHit,
    SparseVector,
    dot,
    normalize,
    quantize,
    sparse_dot,
)
from .sparse import SparseIndex, analyze, bm25_score, build_bm25_index, build_impact_index

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "BenchConfig",
    "DenseVector",
    "FlatIndex",
    "HnswGraph",
    "LookupEncoder",
    "MetricReport",
    "QuantizedSparseVector",
    "QueryEncoder",
    "Run",
    "RuntimeEncoder",
    "ScoredHit",
    "SparseIndex",
    "SparseVector",
    "ThroughputReport",
    "Vocab",
    "analyze",
    "average_fuse",
    "average_precision",
    "bm25_score",
    "build_bm25_index",
    "build_impact_index",
    "ci95",
    "dot",
    "evaluate",
    "flat_search",
    "load_lookup",
    "min_max_normalize",
    "ndcg_at",
    "normalize",
    "parse_qrels",
    "parse_run",
    "quantize",
    "recall_at",
    "recip_rank",
    "run_benchmark",
    "sparse_dot",
    "tokenize",
    "write_run",
]
