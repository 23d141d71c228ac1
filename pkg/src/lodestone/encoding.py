"""Query encoders: pre-encoded lookup tables and on-the-fly model inference.

An encoder turns a query string into a dense or sparse vector at search
time. The lookup encoder serves vectors computed offline; the runtime
encoder tokenizes with uncased WordPiece and runs a .onnx compute graph
(builtin numpy evaluator by default, onnxruntime when requested and
installed).
"""

from __future__ import annotations

import json
from typing import Protocol, runtime_checkable

import numpy as np

from .model import DenseVector, SparseVector, normalize
from .sparse import analyze

CLS = "[CLS]"
SEP = "[SEP]"
UNK = "[UNK]"
CONTINUATION = "##"

DEFAULT_MAX_TOKENS = 64


@runtime_checkable
class QueryEncoder(Protocol):
    """What every encoder provides: a fixed kind and a deterministic encode."""

    kind: str

    def encode(self, query: str) -> DenseVector | SparseVector: ...


class Vocab:
    """WordPiece vocabulary: line number in the vocab file = token id."""

    def __init__(self, tokens: list[str], max_tokens: int = DEFAULT_MAX_TOKENS):
        self.tokens = list(tokens)
        self.ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            dupes = [t for t in set(self.tokens) if self.tokens.count(t) > 1]
            raise ValueError(f"duplicate vocab tokens: {sorted(dupes)[:5]}")
        for special in (CLS, SEP, UNK):
            if special not in self.ids:
                raise ValueError(f"vocabulary is missing required token {special}")
        if max_tokens < 3:
            raise ValueError("max_tokens must leave room for [CLS] and [SEP]")
        self.max_tokens = max_tokens
        self.cls_id = self.ids[CLS]
        self.sep_id = self.ids[SEP]
        self.unk_id = self.ids[UNK]

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_file(cls, path, max_tokens: int = DEFAULT_MAX_TOKENS) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens, max_tokens=max_tokens)


def tokenize(vocab: Vocab, text: str) -> list[int]:
    """Lowercase, pre-split on non-alphanumerics, then greedy longest-match
    WordPiece. Unmatchable words map whole to [UNK]; output is wrapped in
    [CLS]/[SEP] and capped at vocab.max_tokens."""
    pieces: list[int] = []
    for word in analyze(text):
        start = 0
        word_pieces: list[int] = []
        while start < len(word):
            end = len(word)
            found = None
            while start < end:
                sub = word[start:end]
                if start > 0:
                    sub = CONTINUATION + sub
                tid = vocab.ids.get(sub)
                if tid is not None:
                    found = tid
                    break
                end -= 1
            if found is None:
                word_pieces = [vocab.unk_id]
                break
            word_pieces.append(found)
            start = end
        pieces.extend(word_pieces)
    pieces = pieces[: vocab.max_tokens - 2]
    return [vocab.cls_id] + pieces + [vocab.sep_id]


class LookupEncoder:
    """Serves pre-encoded query vectors; exact string match, miss is an error."""

    def __init__(self, table: dict[str, DenseVector | SparseVector], kind: str):
        if kind not in ("dense", "sparse"):
            raise ValueError(f"unknown encoder kind {kind!r}")
        self.table = dict(table)
        self.kind = kind

    def __len__(self) -> int:
        return len(self.table)

    def encode(self, query: str) -> DenseVector | SparseVector:
        if not query:
            raise ValueError("empty query")
        vec = self.table.get(query)
        if vec is None:
            raise ValueError(f"query not pre-encoded: {query}")
        return vec


def load_lookup(path) -> LookupEncoder:
    """Read a TSV of `query<TAB>json-vector` records (array=dense, object=sparse)."""
    table: dict[str, DenseVector | SparseVector] = {}
    first_line: dict[str, int] = {}
    kind: str | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated fields, got {len(parts)}")
            query, payload = parts
            if query in table:
                raise ValueError(
                    f"{path}:{lineno}: duplicate query {query!r} (first seen at line {first_line[query]})"
                )
            try:
                obj = json.loads(payload)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: bad JSON vector: {e}") from e
            if isinstance(obj, list):
                vec: DenseVector | SparseVector = DenseVector(np.asarray(obj, dtype=np.float64))
                this_kind = "dense"
            elif isinstance(obj, dict):
                vec = SparseVector(obj)
                this_kind = "sparse"
            else:
                raise ValueError(f"{path}:{lineno}: vector must be a JSON array or object")
            if kind is None:
                kind = this_kind
            elif kind != this_kind:
                raise ValueError(f"{path}:{lineno}: mixed dense/sparse records in one file")
            table[query] = vec
            first_line[query] = lineno
    if kind is None:
        raise ValueError(f"{path}: no records")
    return LookupEncoder(table, kind)


class _OrtSession:
    def __init__(self, path):
        import onnxruntime as ort

        self.session = ort.InferenceSession(str(path), providers=["CPUExecutionProvider"])
        self.input_names = [i.name for i in self.session.get_inputs()]

    def run(self, feeds):
        return self.session.run(None, feeds)


class RuntimeEncoder:
    """Tokenize, run the compute graph, extract the dense or sparse head.

    Deterministic for a fixed model file. Dense outputs are unit-normalized;
    sparse outputs keep weights strictly above `prune_threshold` and name
    terms through the vocabulary.
    """

    def __init__(
        self,
        model_path,
        vocab: Vocab,
        kind: str = "dense",
        pooling: str = "start",
        prune_threshold: float = 0.0,
        backend: str = "builtin",
    ):
        if kind not in ("dense", "sparse"):
            raise ValueError(f"unknown encoder kind {kind!r}")
        if pooling not in ("start", "mean"):
            raise ValueError(f"unknown pooling {pooling!r} (expected 'start' or 'mean')")
        self.model_path = str(model_path)
        self.vocab = vocab
        self.kind = kind
        self.pooling = pooling
        self.prune_threshold = float(prune_threshold)
        if backend == "onnxruntime":
            self._session = _OrtSession(model_path)
        elif backend == "builtin":
            from .onnxlite import Session

            self._session = Session(model_path)
        else:
            raise ValueError(f"unknown backend {backend!r} (expected 'builtin' or 'onnxruntime')")
        self.backend = backend

    def encode(self, query: str) -> DenseVector | SparseVector:
        if not query:
            raise ValueError("empty query")
        ids = np.asarray(tokenize(self.vocab, query), dtype=np.int64)[np.newaxis, :]
        feeds: dict[str, np.ndarray] = {}
        for name in self._session.input_names:
            if name == "input_ids":
                feeds[name] = ids
            elif name == "attention_mask":
                feeds[name] = np.ones_like(ids)
            elif name == "token_type_ids":
                feeds[name] = np.zeros_like(ids)
            else:
                raise ValueError(f"{self.model_path}: unrecognized model input {name!r}")
        try:
            out = self._session.run(feeds)[0]
        except Exception as e:
            raise RuntimeError(f"inference failed for model {self.model_path}: {e}") from e
        arr = np.asarray(out, dtype=np.float64)
        if arr.ndim == 3:  # (batch, tokens, dim) or (batch, tokens, vocab)
            arr = arr[0]
        if self.kind == "dense":
            if arr.ndim == 2:
                arr = arr[0] if self.pooling == "start" else arr.mean(axis=0)
            elif arr.ndim != 1:
                raise ValueError(f"dense head produced rank-{arr.ndim} output")
            return normalize(DenseVector(arr))
        if arr.ndim == 2:  # per-token vocab weights: max-pool over tokens
            arr = arr.max(axis=0)
        if arr.shape[0] != len(self.vocab):
            raise ValueError(
                f"sparse head width {arr.shape[0]} != vocabulary size {len(self.vocab)}"
            )
        weights = {
            self.vocab.tokens[i]: float(w)
            for i, w in enumerate(arr)
            if w > self.prune_threshold
        }
        return SparseVector(weights)
