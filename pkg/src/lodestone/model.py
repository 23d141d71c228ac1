"""Core vector types shared by every index and scoring path.

Dense vectors are fixed-dimension float arrays; sparse vectors map term
strings to positive weights. Quantization turns sparse weights into integer
impacts so the inverted index can score with integer arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

# Impacts are stored in 16 bits on disk; the builder rejects anything wider.
MAX_IMPACT = 0xFFFF

# Default weight-to-impact scale. Chosen, not taken from any reference
# corpus; override per index via `scale=` / `--scale`.
DEFAULT_QUANT_SCALE = 100


@dataclass(frozen=True, eq=False)
class DenseVector:
    """Fixed-dimension real vector. `values` is an immutable float64 array."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"dense vector must be 1-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("dense vector must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("dense vector contains non-finite values")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.dim


@dataclass(frozen=True)
class SparseVector:
    """Mapping term -> positive weight. Zero weights are dropped, negative rejected."""

    entries: Mapping[str, float]

    def __post_init__(self):
        clean: dict[str, float] = {}
        for term, weight in self.entries.items():
            if not term:
                raise ValueError("sparse vector term strings must be non-empty")
            w = float(weight)
            if not math.isfinite(w):
                raise ValueError(f"non-finite weight for term {term!r}")
            if w < 0:
                raise ValueError(f"negative weight {w} for term {term!r}")
            if w > 0:
                clean[term] = w
        object.__setattr__(self, "entries", MappingProxyType(clean))

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class QuantizedSparseVector:
    """Mapping term -> integer impact in [1, MAX_IMPACT]."""

    entries: Mapping[str, int]

    def __post_init__(self):
        clean: dict[str, int] = {}
        for term, impact in self.entries.items():
            if not term:
                raise ValueError("sparse vector term strings must be non-empty")
            imp = int(impact)
            if imp < 0:
                raise ValueError(f"negative impact {imp} for term {term!r}")
            if imp > MAX_IMPACT:
                raise ValueError(
                    f"impact {imp} for term {term!r} exceeds 16-bit limit {MAX_IMPACT}"
                )
            if imp > 0:
                clean[term] = imp
        object.__setattr__(self, "entries", MappingProxyType(clean))

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ScoredHit:
    """One ranked result. Ranks are 1-based; lists are score-desc, doc_id-asc on ties."""

    doc_id: str
    score: float
    rank: int


def rank_hits(scored: Iterable[tuple[str, float]], k: int | None = None) -> list[ScoredHit]:
    """Order (doc_id, score) pairs by score desc / doc_id asc and assign 1-based ranks."""
    ordered = sorted(scored, key=lambda p: (-p[1], p[0]))
    if k is not None:
        ordered = ordered[:k]
    return [ScoredHit(doc_id, float(score), i + 1) for i, (doc_id, score) in enumerate(ordered)]


def normalize(v: DenseVector) -> DenseVector:
    """Return v scaled to unit L2 norm; raises on the zero vector."""
    norm = float(np.linalg.norm(v.values))
    if norm == 0.0:
        raise ValueError("cannot normalize zero vector")
    return DenseVector(v.values / norm)


def dot(a: DenseVector, b: DenseVector) -> float:
    """Inner product; equals cosine similarity for unit-normalized inputs."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.dot(a.values, b.values))


def sparse_dot(
    q: SparseVector | QuantizedSparseVector,
    d: SparseVector | QuantizedSparseVector,
) -> float | int:
    """Dot product over the intersection of term sets; 0 when disjoint.

    Integer for quantized x quantized, float otherwise. Terms accumulate in
    sorted order so the result is exactly symmetric in its arguments.
    """
    qe, de = q.entries, d.entries
    if len(de) < len(qe):
        qe, de = de, qe
    total = 0
    for term in sorted(t for t in qe if t in de):
        total += qe[term] * de[term]
    if isinstance(q, QuantizedSparseVector) and isinstance(d, QuantizedSparseVector):
        return int(total)
    return float(total)


def quantize(v: SparseVector, scale: int = DEFAULT_QUANT_SCALE) -> QuantizedSparseVector:
    """Map each weight w to round(w * scale), half away from zero; zero impacts drop.

    Raises on any impact wider than 16 bits, naming the offending term.
    """
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    out: dict[str, int] = {}
    for term, w in v.entries.items():
        impact = math.floor(w * scale + 0.5)
        if impact > MAX_IMPACT:
            raise ValueError(
                f"impact overflow for term {term!r}: round({w} * {scale}) = {impact} > {MAX_IMPACT}"
            )
        if impact > 0:
            out[term] = impact
    return QuantizedSparseVector(out)
