"""Single-segment inverted index over quantized impacts or BM25 statistics.

Postings live in two concatenated arrays (doc ordinals + impacts) with
per-term slices, so a search never touches more than one postings structure
per term. Traversal is exhaustive document-at-a-time with a bounded heap of
size k; results are exact (ids, order, and scores) with ties broken by
external doc_id ascending.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .model import (
    DEFAULT_QUANT_SCALE,
    QuantizedSparseVector,
    ScoredHit,
    SparseVector,
    quantize,
)
from .storage import (
    ChecksumReader,
    ChecksumWriter,
    atomic_write,
    check_magic,
    check_version,
)

MAGIC = b"LSIX"
VERSION = 1

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

_TOKEN_RE = re.compile(r"[0-9a-z]+")


def analyze(text: str) -> list[str]:
    """Default analyzer: lowercase, split on any non-alphanumeric run.

    No stemming, no stopwords; deterministic and total.
    """
    return _TOKEN_RE.findall(text.lower())


def bm25_score(
    tf: int,
    df: int,
    doc_len: int,
    avg_len: float,
    N: int,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    """idf * saturated-tf with a never-negative idf.

    idf = ln(1 + (N - df + 0.5) / (df + 0.5))
    sat = tf * (k1 + 1) / (tf + k1 * (1 - b + b * doc_len / avg_len))
    """
    if df < 1 or N < 1:
        raise ValueError(f"df and N must be positive (df={df}, N={N})")
    idf = math.log(1.0 + (N - df + 0.5) / (df + 0.5))
    tff = float(tf)
    # expression tree shared with the scoring kernels: do not refactor casually
    sat = (tff * (k1 + 1.0)) / (tff + k1 * (1.0 - b + b * float(doc_len) / avg_len))
    return idf * sat


@dataclass(frozen=True, eq=False)
class PostingList:
    """Materialized view of one term's postings (ordinals strictly increasing)."""

    term: str
    doc_ordinals: np.ndarray
    impacts: np.ndarray
    max_impact: int

    def __len__(self) -> int:
        return int(self.doc_ordinals.shape[0])


class SparseIndex:
    """Immutable single-segment index; build via the module-level builders."""

    def __init__(
        self,
        mode: str,
        doc_ids: list[str],
        term_slices: dict[str, tuple[int, int, int]],
        ordinals: np.ndarray,
        impacts: np.ndarray,
        quantization_scale: int | None = None,
        k1: float | None = None,
        b: float | None = None,
        doc_lengths: np.ndarray | None = None,
        avg_doc_length: float | None = None,
    ):
        if mode not in ("impact", "bm25"):
            raise ValueError(f"unknown index mode {mode!r}")
        self.mode = mode
        self.doc_ids = doc_ids
        self.doc_count = len(doc_ids)
        self._term_slices = term_slices
        self._ordinals = ordinals
        self._impacts = impacts
        self.quantization_scale = quantization_scale
        self.k1 = k1
        self.b = b
        self.doc_lengths = doc_lengths
        self.avg_doc_length = avg_doc_length
        # lexicographic rank of each ordinal's external id, for tie-breaking
        order = sorted(range(self.doc_count), key=doc_ids.__getitem__)
        rank = np.empty(self.doc_count, dtype=np.int32)
        for pos, o in enumerate(order):
            rank[o] = pos
        self._doc_rank = rank

    # -- introspection ------------------------------------------------------

    @property
    def terms(self) -> Iterable[str]:
        return self._term_slices.keys()

    def df(self, term: str) -> int:
        sl = self._term_slices.get(term)
        return 0 if sl is None else sl[1] - sl[0]

    def posting_list(self, term: str) -> PostingList | None:
        sl = self._term_slices.get(term)
        if sl is None:
            return None
        s, e, mx = sl
        return PostingList(term, self._ordinals[s:e], self._impacts[s:e], mx)

    # -- search -------------------------------------------------------------

    def search(
        self,
        query: SparseVector | QuantizedSparseVector | Sequence[str] | str,
        k: int,
    ) -> list[ScoredHit]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if self.mode == "impact":
            return self._search_impact(query, k)
        return self._search_bm25(query, k)

    def _search_impact(self, query, k: int) -> list[ScoredHit]:
        if isinstance(query, SparseVector):
            query = quantize(query, self.quantization_scale)
        if not isinstance(query, QuantizedSparseVector):
            raise TypeError("impact index expects a sparse vector query")
        pairs = [
            (term, impact)
            for term, impact in sorted(query.entries.items())
            if term in self._term_slices
        ]
        return self._run_kernel_impact(pairs, k)

    def _search_bm25(self, query, k: int) -> list[ScoredHit]:
        if isinstance(query, str):
            tokens = analyze(query)
        elif isinstance(query, (SparseVector, QuantizedSparseVector)):
            raise TypeError("bm25 index expects a token sequence or text query")
        else:
            tokens = list(query)
        # repeated query terms weight their contribution once per occurrence
        counts = sorted(Counter(tokens).items())
        pairs = [(term, qtf) for term, qtf in counts if term in self._term_slices]
        return self._run_kernel_bm25(pairs, k)

    def _slices_for(self, terms: list[str]):
        starts = np.array([self._term_slices[t][0] for t in terms], dtype=np.int64)
        ends = np.array([self._term_slices[t][1] for t in terms], dtype=np.int64)
        return starts, ends

    def _run_kernel_impact(self, pairs: list[tuple[str, int]], k: int) -> list[ScoredHit]:
        if not pairs:
            return []
        terms = [t for t, _ in pairs]
        starts, ends = self._slices_for(terms)
        qweights = np.array([w for _, w in pairs], dtype=np.float64)
        ords, scores = kernels.active().topk_impact(
            starts, ends, self._ordinals, self._impacts, qweights,
            self._doc_rank, self.doc_count, min(k, self.doc_count),
        )
        return self._to_hits(ords, scores)

    def _run_kernel_bm25(self, pairs: list[tuple[str, float]], k: int) -> list[ScoredHit]:
        if not pairs:
            return []
        terms = [t for t, _ in pairs]
        starts, ends = self._slices_for(terms)
        qtf = np.array([w for _, w in pairs], dtype=np.float64)
        n = self.doc_count
        idf = np.array(
            [math.log(1.0 + (n - self.df(t) + 0.5) / (self.df(t) + 0.5)) for t in terms],
            dtype=np.float64,
        )
        ords, scores = kernels.active().topk_bm25(
            starts, ends, self._ordinals, self._impacts, idf, qtf,
            self.doc_lengths, self.avg_doc_length, self.k1, self.b,
            self._doc_rank, n, min(k, n),
        )
        return self._to_hits(ords, scores)

    def _to_hits(self, ords: np.ndarray, scores: np.ndarray) -> list[ScoredHit]:
        return [
            ScoredHit(self.doc_ids[o], float(s), i + 1)
            for i, (o, s) in enumerate(zip(ords, scores))
        ]

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        with atomic_write(path) as fh:
            w = ChecksumWriter(fh)
            w.write(MAGIC)
            w.write_u16(VERSION)
            w.write_u8(0 if self.mode == "impact" else 1)
            if self.mode == "impact":
                w.write_u32(self.quantization_scale)
            else:
                w.write_f64(self.k1)
                w.write_f64(self.b)
                w.write_f64(self.avg_doc_length)
            w.write_u64(self.doc_count)
            for doc_id in self.doc_ids:
                w.write_str(doc_id)
            if self.mode == "bm25":
                w.write_array(self.doc_lengths.astype(np.uint32))
            w.write_u64(len(self._term_slices))
            for term in sorted(self._term_slices):
                s, e, mx = self._term_slices[term]
                w.write_str(term)
                w.write_varint(e - s)
                w.write_varint(mx)
                prev = 0
                for i in range(s, e):
                    o = int(self._ordinals[i])
                    w.write_varint(o - prev)
                    prev = o
                    w.write_varint(int(self._impacts[i]))
            w.finish()

    @classmethod
    def load(cls, path) -> "SparseIndex":
        with open(path, "rb") as fh:
            r = ChecksumReader(fh, what="sparse index")
            check_magic(r, MAGIC, "sparse index")
            check_version(r, VERSION, "sparse index")
            mode = "impact" if r.read_u8() == 0 else "bm25"
            scale = k1 = b = avg = doc_lengths = None
            if mode == "impact":
                scale = r.read_u32()
            else:
                k1 = r.read_f64()
                b = r.read_f64()
                avg = r.read_f64()
            doc_count = r.read_u64()
            doc_ids = [r.read_str() for _ in range(doc_count)]
            if mode == "bm25":
                doc_lengths = r.read_array("uint32").astype(np.int32)
            n_terms = r.read_u64()
            term_slices: dict[str, tuple[int, int, int]] = {}
            ords: list[int] = []
            imps: list[int] = []
            for _ in range(n_terms):
                term = r.read_str()
                count = r.read_varint()
                mx = r.read_varint()
                start = len(ords)
                prev = 0
                for _ in range(count):
                    prev += r.read_varint()
                    ords.append(prev)
                    imps.append(r.read_varint())
                term_slices[term] = (start, start + count, mx)
            r.verify_checksum()
        return cls(
            mode,
            doc_ids,
            term_slices,
            np.array(ords, dtype=np.int32),
            np.array(imps, dtype=np.int32),
            quantization_scale=scale,
            k1=k1,
            b=b,
            doc_lengths=doc_lengths,
            avg_doc_length=avg,
        )


def _finalize_postings(acc: dict[str, tuple[list[int], list[int]]]):
    term_slices: dict[str, tuple[int, int, int]] = {}
    ords: list[int] = []
    imps: list[int] = []
    for term in sorted(acc):
        t_ords, t_imps = acc[term]
        start = len(ords)
        ords.extend(t_ords)
        imps.extend(t_imps)
        term_slices[term] = (start, start + len(t_ords), max(t_imps))
    return term_slices, np.array(ords, dtype=np.int32), np.array(imps, dtype=np.int32)


def build_impact_index(
    corpus: Iterable[tuple[str, SparseVector]],
    scale: int = DEFAULT_QUANT_SCALE,
) -> SparseIndex:
    """Quantize each document at `scale` and assemble a single-segment index.

    Doc ordinals follow ingestion order; duplicate ids and impact overflow
    raise with the offending name.
    """
    doc_ids: list[str] = []
    seen: set[str] = set()
    acc: dict[str, tuple[list[int], list[int]]] = {}
    for doc_id, vec in corpus:
        if doc_id in seen:
            raise ValueError(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        ordinal = len(doc_ids)
        doc_ids.append(doc_id)
        if isinstance(vec, SparseVector):
            vec = quantize(vec, scale)
        for term, impact in vec.entries.items():
            bucket = acc.setdefault(term, ([], []))
            bucket[0].append(ordinal)
            bucket[1].append(impact)
    if not doc_ids:
        raise ValueError("empty corpus")
    term_slices, ords, imps = _finalize_postings(acc)
    return SparseIndex(
        "impact", doc_ids, term_slices, ords, imps, quantization_scale=scale
    )


def build_bm25_index(
    corpus: Iterable[tuple[str, Sequence[str]]],
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> SparseIndex:
    """Index token sequences: postings hold raw term frequencies, lengths recorded."""
    doc_ids: list[str] = []
    seen: set[str] = set()
    acc: dict[str, tuple[list[int], list[int]]] = {}
    lengths: list[int] = []
    for doc_id, tokens in corpus:
        if doc_id in seen:
            raise ValueError(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        ordinal = len(doc_ids)
        doc_ids.append(doc_id)
        tokens = list(tokens)
        lengths.append(len(tokens))
        for term, tf in sorted(Counter(tokens).items()):
            bucket = acc.setdefault(term, ([], []))
            bucket[0].append(ordinal)
            bucket[1].append(tf)
    if not doc_ids:
        raise ValueError("empty corpus")
    term_slices, ords, imps = _finalize_postings(acc)
    doc_lengths = np.array(lengths, dtype=np.int32)
    return SparseIndex(
        "bm25",
        doc_ids,
        term_slices,
        ords,
        imps,
        k1=float(k1),
        b=float(b),
        doc_lengths=doc_lengths,
        avg_doc_length=float(np.mean(doc_lengths.astype(np.float64))),
    )
