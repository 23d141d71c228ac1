import numpy as np
import pytest

from lodestone.model import SparseVector
from lodestone.onnxlite import Node, save_model

VOCAB_SIZE = 500
DOC_COUNT = 1000
QUERY_COUNT = 50


def make_sparse_corpus(
    rng: np.random.Generator,
    n_docs: int = DOC_COUNT,
    vocab_size: int = VOCAB_SIZE,
    terms_per_doc: int = 20,
) -> list[tuple[str, SparseVector]]:
    """Seeded synthetic corpus; ingestion order is shuffled relative to the
    lexicographic id order so tie-breaking is actually exercised."""
    vocab = [f"t{i:03d}" for i in range(vocab_size)]
    ids = [f"d{i:04d}" for i in range(n_docs)]
    rng.shuffle(ids)
    docs = []
    for doc_id in ids:
        n_terms = int(rng.integers(max(1, terms_per_doc - 8), terms_per_doc + 8))
        terms = rng.choice(vocab_size, size=min(n_terms, vocab_size), replace=False)
        weights = {vocab[t]: float(rng.uniform(0.05, 3.0)) for t in terms}
        docs.append((doc_id, SparseVector(weights)))
    return docs


def make_sparse_queries(
    rng: np.random.Generator,
    n_queries: int = QUERY_COUNT,
    vocab_size: int = VOCAB_SIZE,
) -> list[SparseVector]:
    vocab = [f"t{i:03d}" for i in range(vocab_size)]
    queries = []
    for _ in range(n_queries):
        n_terms = int(rng.integers(2, 8))
        terms = rng.choice(vocab_size, size=n_terms, replace=False)
        entries = {vocab[t]: float(rng.uniform(0.1, 2.0)) for t in terms}
        entries["zz_not_in_vocab"] = 0.5  # OOV terms must contribute nothing
        queries.append(SparseVector(entries))
    return queries


@pytest.fixture(scope="session")
def sparse_corpus():
    return make_sparse_corpus(np.random.default_rng(1234))


@pytest.fixture(scope="session")
def sparse_queries():
    return make_sparse_queries(np.random.default_rng(99))


TINY_VOCAB = ["[CLS]", "[SEP]", "[UNK]", "play", "##ing", "the", "cat", "hat", "dog", "tree"]


def _mlp_nodes() -> list[Node]:
    # Gather -> mix in the token-mean (so the [CLS] state depends on the whole
    # query) -> 2-layer MLP applied per token
    return [
        Node("Gather", ["emb", "input_ids"], ["x0"], attrs={"axis": 0}),
        Node("ReduceMean", ["x0"], ["pool"], attrs={"axes": [1], "keepdims": 1}),
        Node("Add", ["x0", "pool"], ["mixed"]),
        Node("MatMul", ["mixed", "w1"], ["h0"]),
        Node("Add", ["h0", "b1"], ["h1"]),
        Node("Relu", ["h1"], ["h2"]),
        Node("MatMul", ["h2", "w2"], ["h3"]),
        Node("Add", ["h3", "b2"], ["h4"]),
        Node("Tanh", ["h4"], ["states"]),
    ]


def _mlp_weights(rng: np.random.Generator, dim: int = 8, hidden: int = 16) -> dict:
    v = len(TINY_VOCAB)
    return {
        "emb": rng.standard_normal((v, dim)).astype(np.float32),
        "w1": rng.standard_normal((dim, hidden)).astype(np.float32),
        "b1": rng.standard_normal(hidden).astype(np.float32),
        "w2": rng.standard_normal((hidden, dim)).astype(np.float32),
        "b2": rng.standard_normal(dim).astype(np.float32),
    }


def write_tiny_dense_model(path, seed: int = 5, dim: int = 8) -> None:
    weights = _mlp_weights(np.random.default_rng(seed), dim=dim)
    save_model(
        path,
        _mlp_nodes(),
        weights,
        inputs=[("input_ids", np.int64, (1, "seq"))],
        outputs=[("states", np.float32, (1, "seq", dim))],
    )


def write_tiny_sparse_model(path, seed: int = 5, dim: int = 8) -> None:
    rng = np.random.default_rng(seed)
    weights = _mlp_weights(rng, dim=dim)
    weights["wv"] = rng.standard_normal((dim, len(TINY_VOCAB))).astype(np.float32)
    nodes = _mlp_nodes() + [
        Node("MatMul", ["states", "wv"], ["y0"]),
        Node("Relu", ["y0"], ["y1"]),
        Node("ReduceMax", ["y1"], ["weights"], attrs={"axes": [1], "keepdims": 0}),
    ]
    save_model(
        path,
        nodes,
        weights,
        inputs=[("input_ids", np.int64, (1, "seq"))],
        outputs=[("weights", np.float32, (1, len(TINY_VOCAB)))],
    )


@pytest.fixture(scope="session")
def tiny_dense_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "tiny_dense.onnx"
    write_tiny_dense_model(path)
    return path


@pytest.fixture(scope="session")
def tiny_sparse_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "tiny_sparse.onnx"
    write_tiny_sparse_model(path)
    return path
