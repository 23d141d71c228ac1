"""HNSW graph index over unit-normalized vectors, plus the exhaustive flat oracle.

Scoring is plain dot product over vectors normalized at ingestion, which
equals cosine similarity. Vectors are normalized in float64 then snapped to
float32-representable values so the float32 disk payload round-trips without
changing any score. Construction is single-threaded and fully deterministic
for a fixed seed and insertion order.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import DenseVector, ScoredHit
from .storage import (
    ChecksumReader,
    ChecksumWriter,
    atomic_write,
    check_magic,
    check_version,
)

MAGIC = b"LDIX"
VERSION = 1

DEFAULT_M = 16
DEFAULT_EF_CONSTRUCTION = 1000
DEFAULT_EF_SEARCH = 1000


def _prepare(values, dim: int | None) -> np.ndarray:
    """Normalize to unit L2 in float64, snapped to float32-representable values."""
    if isinstance(values, DenseVector):
        arr = values.values
    else:
        arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"vector must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {arr.shape[0]}")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("cannot normalize zero vector")
    return (arr / norm).astype(np.float32).astype(np.float64)


@dataclass
class AuditReport:
    """Result of the exhaustive structural audit."""

    node_count: int
    max_level: int
    violations: list[str] = field(default_factory=list)
    layer0_components: int = 0
    reachable_from_entry: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def fully_reachable(self) -> bool:
        return self.reachable_from_entry == self.node_count


class HnswGraph:
    """Layered proximity graph. Build with insert(); searches are read-only."""

    def __init__(
        self,
        dim: int,
        m: int = DEFAULT_M,
        ef_construction: int = DEFAULT_EF_CONSTRUCTION,
        seed: int = 0,
        ml: float | None = None,
    ):
        if dim < 1:
            raise ValueError("dim must be positive")
        if m < 2:
            raise ValueError("m must be >= 2")
        self.dim = dim
        self.m = m
        self.ef_construction = ef_construction
        self.seed = seed
        self.ml = (1.0 / math.log(m)) if ml is None else float(ml)
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self.doc_ids: list[str] = []
        self._id_set: set[str] = set()
        self.n = 0
        self.entry = -1
        self.max_level = -1
        self._frozen = False
        cap = 16
        self._vecs = np.zeros((cap, dim), dtype=np.float64)
        self._levels = np.zeros(cap, dtype=np.int32)
        self._adj = np.zeros((1, cap, 2 * m), dtype=np.int32)
        self._deg = np.zeros((1, cap), dtype=np.int32)

    def __len__(self) -> int:
        return self.n

    # -- construction -------------------------------------------------------

    def _grow(self, need_nodes: int, need_layers: int) -> None:
        cap = self._vecs.shape[0]
        if need_nodes > cap:
            new_cap = max(need_nodes, int(cap * 1.5) + 1)
            vecs = np.zeros((new_cap, self.dim), dtype=np.float64)
            vecs[:cap] = self._vecs
            self._vecs = vecs
            levels = np.zeros(new_cap, dtype=np.int32)
            levels[:cap] = self._levels
            self._levels = levels
            layers = self._adj.shape[0]
            adj = np.zeros((layers, new_cap, 2 * self.m), dtype=np.int32)
            adj[:, :cap, :] = self._adj
            self._adj = adj
            deg = np.zeros((layers, new_cap), dtype=np.int32)
            deg[:, :cap] = self._deg
            self._deg = deg
        layers = self._adj.shape[0]
        if need_layers > layers:
            cap = self._vecs.shape[0]
            adj = np.zeros((need_layers, cap, 2 * self.m), dtype=np.int32)
            adj[:layers] = self._adj
            self._adj = adj
            deg = np.zeros((need_layers, cap), dtype=np.int32)
            deg[:layers] = self._deg
            self._deg = deg

    def _sample_level(self) -> int:
        u = 1.0 - self._rng.random()  # uniform in (0, 1]
        return int(math.floor(-math.log(u) * self.ml))

    def insert(self, doc_id: str, values) -> None:
        if self._frozen:
            raise ValueError("loaded graphs are read-only; rebuild to add documents")
        if doc_id in self._id_set:
            raise ValueError(f"duplicate doc_id {doc_id!r}")
        vec = _prepare(values, self.dim)
        level = self._sample_level()
        i = self.n
        self._grow(i + 1, max(level, self.max_level) + 1)
        self._vecs[i] = vec
        self._levels[i] = level
        self.doc_ids.append(doc_id)
        self._id_set.add(doc_id)
        entry, max_level = kernels.active().hnsw_insert(
            self._vecs, self._adj, self._deg,
            i, level, self.entry, self.max_level,
            self.m, self.ef_construction,
        )
        self.entry = int(entry)
        self.max_level = int(max_level)
        self.n = i + 1

    # -- search -------------------------------------------------------------

    def search(self, query, k: int, ef_search: int = DEFAULT_EF_SEARCH) -> list[ScoredHit]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if ef_search < k:
            raise ValueError(f"ef_search ({ef_search}) must be >= k ({k})")
        if self.n == 0:
            return []
        q = _prepare(query, self.dim)
        ids, sims = kernels.active().hnsw_search(
            self._vecs, self._adj, self._deg,
            self.n, self.entry, self.max_level, q, ef_search,
        )
        ranked = sorted(
            ((self.doc_ids[i], float(s)) for i, s in zip(ids, sims)),
            key=lambda p: (-p[1], p[0]),
        )[:k]
        return [ScoredHit(d, s, r + 1) for r, (d, s) in enumerate(ranked)]

    # -- audit --------------------------------------------------------------

    def audit(self) -> AuditReport:
        """Exhaustive structural walk: degree bounds, layer containment,
        entry-point maximality, self-loops, duplicates; reports connectivity."""
        report = AuditReport(node_count=self.n, max_level=self.max_level)
        v = report.violations
        if self.n == 0:
            return report
        levels = self._levels[: self.n]
        if self.entry < 0 or self.entry >= self.n:
            v.append(f"entry point {self.entry} out of range")
            return report
        top = int(levels.max())
        if int(levels[self.entry]) != self.max_level:
            v.append(
                f"entry point level {int(levels[self.entry])} != recorded max {self.max_level}"
            )
        if top != self.max_level:
            v.append(f"recorded max level {self.max_level} != observed max {top}")
        n_layers = self._adj.shape[0]
        for i in range(self.n):
            li = int(levels[i])
            for layer in range(n_layers):
                d = int(self._deg[layer, i])
                if layer > li:
                    if d != 0:
                        v.append(f"node {i} has {d} neighbors above its top layer {li}")
                    continue
                bound = 2 * self.m if layer == 0 else self.m
                if d > bound:
                    v.append(f"node {i} layer {layer}: degree {d} exceeds bound {bound}")
                nbrs = self._adj[layer, i, :d]
                if d and (np.unique(nbrs).size != d):
                    v.append(f"node {i} layer {layer}: duplicate neighbors")
                for nb in nbrs:
                    nb = int(nb)
                    if nb == i:
                        v.append(f"node {i} layer {layer}: self-loop")
                    elif nb < 0 or nb >= self.n:
                        v.append(f"node {i} layer {layer}: neighbor {nb} out of range")
                    elif int(levels[nb]) < layer:
                        v.append(
                            f"node {i} layer {layer}: neighbor {nb} only reaches layer {int(levels[nb])}"
                        )
        norms = np.linalg.norm(self._vecs[: self.n], axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-4)
        for i in bad:
            v.append(f"node {int(i)}: norm {norms[i]:.6f} deviates from 1")
        report.layer0_components = self._count_components_layer0()
        report.reachable_from_entry = self._count_reachable()
        return report

    def _neighbors(self, layer: int, i: int) -> np.ndarray:
        return self._adj[layer, i, : self._deg[layer, i]]

    def _count_components_layer0(self) -> int:
        seen = np.zeros(self.n, dtype=bool)
        components = 0
        # undirected view of layer 0
        reverse: dict[int, list[int]] = {}
        for i in range(self.n):
            for nb in self._neighbors(0, i):
                reverse.setdefault(int(nb), []).append(i)
        for start in range(self.n):
            if seen[start]:
                continue
            components += 1
            queue = deque([start])
            seen[start] = True
            while queue:
                cur = queue.popleft()
                for nb in self._neighbors(0, cur):
                    if not seen[nb]:
                        seen[nb] = True
                        queue.append(int(nb))
                for nb in reverse.get(cur, ()):
                    if not seen[nb]:
                        seen[nb] = True
                        queue.append(nb)
        return components

    def _count_reachable(self) -> int:
        """Directed closure from the entry point over all layers (what search can see)."""
        seen = np.zeros(self.n, dtype=bool)
        seen[self.entry] = True
        queue = deque([self.entry])
        count = 1
        n_layers = self._adj.shape[0]
        while queue:
            cur = queue.popleft()
            for layer in range(min(int(self._levels[cur]), n_layers - 1) + 1):
                for nb in self._neighbors(layer, cur):
                    nb = int(nb)
                    if not seen[nb]:
                        seen[nb] = True
                        count += 1
                        queue.append(nb)
        return count

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        with atomic_write(path) as fh:
            w = ChecksumWriter(fh)
            w.write(MAGIC)
            w.write_u16(VERSION)
            w.write_u32(self.dim)
            w.write_u32(self.m)
            w.write_u64(self.n)
            w.write_u64(self.entry + 1)  # 0 = empty graph
            w.write_u32(self.ef_construction)
            w.write_f64(self.ml)
            w.write_u64(self.seed)
            for i in range(self.n):
                w.write_str(self.doc_ids[i])
                w.write_varint(int(self._levels[i]))
                w.write_array(self._vecs[i].astype(np.float32))
                for layer in range(int(self._levels[i]) + 1):
                    d = int(self._deg[layer, i])
                    w.write_varint(d)
                    for nb in self._adj[layer, i, :d]:
                        w.write_varint(int(nb))
            w.finish()

    @classmethod
    def load(cls, path) -> "HnswGraph":
        with open(path, "rb") as fh:
            r = ChecksumReader(fh, what="dense index")
            check_magic(r, MAGIC, "dense index")
            check_version(r, VERSION, "dense index")
            dim = r.read_u32()
            m = r.read_u32()
            n = r.read_u64()
            entry = r.read_u64() - 1
            efc = r.read_u32()
            ml = r.read_f64()
            seed = r.read_u64()
            graph = cls(dim, m=m, ef_construction=efc, seed=seed, ml=ml)
            doc_ids: list[str] = []
            levels = np.zeros(max(n, 1), dtype=np.int32)
            vecs = np.zeros((max(n, 1), dim), dtype=np.float64)
            neighbor_lists: list[list[np.ndarray]] = []
            for i in range(n):
                doc_ids.append(r.read_str())
                levels[i] = r.read_varint()
                vec = r.read_array("float32")
                if vec.shape[0] != dim:
                    raise ValueError(f"vector payload has dim {vec.shape[0]}, header says {dim}")
                vecs[i] = vec.astype(np.float64)
                per_layer = []
                for _ in range(int(levels[i]) + 1):
                    d = r.read_varint()
                    per_layer.append(
                        np.array([r.read_varint() for _ in range(d)], dtype=np.int32)
                    )
                neighbor_lists.append(per_layer)
            r.verify_checksum()
        max_level = int(levels[:n].max()) if n else -1
        graph._grow(max(n, 1), max_level + 1)
        graph._vecs[:n] = vecs[:n]
        graph._levels[:n] = levels[:n]
        for i, per_layer in enumerate(neighbor_lists):
            for layer, nbrs in enumerate(per_layer):
                graph._deg[layer, i] = len(nbrs)
                graph._adj[layer, i, : len(nbrs)] = nbrs
        graph.doc_ids = doc_ids
        graph._id_set = set(doc_ids)
        graph.n = int(n)
        graph.entry = int(entry)
        graph.max_level = max_level
        graph._frozen = True
        return graph


class FlatIndex:
    """Exhaustive exact-scan index; the recall oracle for the graph."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.doc_ids: list[str] = []
        self._id_set: set[str] = set()
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None
        self._doc_rank: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.doc_ids)

    def add(self, doc_id: str, values) -> None:
        if doc_id in self._id_set:
            raise ValueError(f"duplicate doc_id {doc_id!r}")
        self._rows.append(_prepare(values, self.dim))
        self.doc_ids.append(doc_id)
        self._id_set.add(doc_id)
        self._matrix = None
        self._doc_rank = None

    def _materialize(self):
        if self._matrix is None:
            self._matrix = np.vstack(self._rows)
            order = sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)
            rank = np.empty(len(order), dtype=np.int64)
            for pos, o in enumerate(order):
                rank[o] = pos
            self._doc_rank = rank
        return self._matrix, self._doc_rank

    def search(self, query, k: int) -> list[ScoredHit]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not self.doc_ids:
            return []
        q = _prepare(query, self.dim)
        matrix, rank = self._materialize()
        sims = kernels.active().dot_scores(matrix, q)
        order = np.lexsort((rank, -sims))[:k]
        return [
            ScoredHit(self.doc_ids[o], float(sims[o]), i + 1)
            for i, o in enumerate(order)
        ]


def flat_search(index: FlatIndex, query, k: int) -> list[ScoredHit]:
    return index.search(query, k)
