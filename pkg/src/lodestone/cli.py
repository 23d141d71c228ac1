"""Command-line surface: index, search, fuse, eval, bench.

Corpus files are JSONL records with an `id` plus either `contents` (text),
a `vector` array (dense) or a `vector` object (sparse). Index files are
self-describing via magic bytes, so search/bench only need the path.

`--config file.toml` may supply per-subcommand flag defaults (one table per
subcommand, keys = flag names); explicit flags always win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import bench as bench_mod
from . import dense, encoding, evaluation, fusion, sparse
from .model import SparseVector
from .storage import StorageError, WrongFormatError


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config file: per-subcommand flag defaults, explicit flags win
# ---------------------------------------------------------------------------


def _parse_flat_toml(text: str, path: str) -> dict:
    """Fallback for Python 3.10 (no tomllib): tables of scalar assignments.

    Supports [section], strings, ints, floats, and booleans; that is the
    whole shape a config file here can take anyway.
    """
    data: dict[str, dict] = {}
    section: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name or "." in name:
                raise CliError(f"{path}:{lineno}: unsupported table {line!r}")
            section = data.setdefault(name, {})
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        if section is None:
            raise CliError(f"{path}:{lineno}: assignments must live under a [subcommand] table")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            section[key] = value[1:-1]
        elif value in ("true", "false"):
            section[key] = value == "true"
        else:
            try:
                section[key] = int(value)
            except ValueError:
                try:
                    section[key] = float(value)
                except ValueError as e:
                    raise CliError(f"{path}:{lineno}: cannot parse value {value!r}") from e
    return data


def _load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        import tomllib
    except ModuleNotFoundError:
        return _parse_flat_toml(text, path)
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise CliError(f"{path}: {e}") from e


def _apply_config(parser: argparse.ArgumentParser, path: str) -> None:
    config = _load_config(path)
    subparsers = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    for section, values in config.items():
        sub = subparsers.choices.get(section)
        if sub is None:
            raise CliError(f"{path}: [{section}] is not a subcommand")
        if not isinstance(values, dict):
            raise CliError(f"{path}: [{section}] must be a table of flag defaults")
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            action = actions.get(dest)
            if action is None:
                raise CliError(f"{path}: unknown key {key!r} in [{section}]")
            if action.type in (int, float) and isinstance(value, str):
                value = action.type(value)
            if action.type is float and isinstance(value, int):
                value = float(value)
            if action.choices and value not in action.choices:
                raise CliError(
                    f"{path}: [{section}] {key} = {value!r} not in {sorted(action.choices)}"
                )
            defaults[dest] = value
            if action.required:
                action.required = False
        sub.set_defaults(**defaults)


# ---------------------------------------------------------------------------
# shared input handling
# ---------------------------------------------------------------------------


def _read_corpus(path: str, kind: str):
    """Yield (line_number, doc_id, payload) records matching the index kind."""
    want = {"bm25": "a 'contents' string", "impact": "an object 'vector'", "hnsw": "an array 'vector'"}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CliError(f"{path}:{lineno}: bad JSON: {e}") from e
            if not isinstance(rec, dict) or not isinstance(rec.get("id"), str) or not rec["id"]:
                raise CliError(f"{path}:{lineno}: record needs a non-empty string 'id'")
            doc_id = rec["id"]
            contents = rec.get("contents")
            vector = rec.get("vector")
            if kind == "bm25":
                if not isinstance(contents, str):
                    raise CliError(f"{path}:{lineno}: expected {want[kind]}")
                yield lineno, doc_id, sparse.analyze(contents)
            elif kind == "impact":
                if not isinstance(vector, dict):
                    raise CliError(f"{path}:{lineno}: expected {want[kind]}")
                yield lineno, doc_id, vector
            else:
                if not isinstance(vector, list):
                    raise CliError(f"{path}:{lineno}: expected {want[kind]}")
                yield lineno, doc_id, vector


def _read_queries_tsv(path: str) -> list[tuple[str, str]]:
    queries: list[tuple[str, str]] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise CliError(f"{path}:{lineno}: expected 'qid<TAB>query text'")
            qid, text = parts
            if qid in seen:
                raise CliError(f"{path}:{lineno}: duplicate query id {qid!r}")
            seen.add(qid)
            queries.append((qid, text))
    if not queries:
        raise CliError(f"{path}: no queries")
    return queries


def load_any_index(path: str):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == sparse.MAGIC:
        return sparse.SparseIndex.load(path)
    if magic == dense.MAGIC:
        return dense.HnswGraph.load(path)
    raise WrongFormatError(f"{path}: unknown index kind (magic {magic!r})")


def _build_encoder(args) -> encoding.LookupEncoder | encoding.RuntimeEncoder:
    if args.encoder == "lookup":
        if not args.encoder_file:
            raise CliError("--encoder lookup requires --encoder-file")
        return encoding.load_lookup(args.encoder_file)
    if args.encoder == "onnx":
        if not (args.model and args.vocab):
            raise CliError("--encoder onnx requires --model and --vocab")
        vocab = encoding.Vocab.from_file(args.vocab, max_tokens=args.max_query_tokens)
        return encoding.RuntimeEncoder(
            args.model,
            vocab,
            kind=args.head,
            pooling=args.pooling,
            prune_threshold=args.prune_threshold,
            backend=args.onnx_backend,
        )
    raise CliError(f"unknown encoder {args.encoder!r}")


def _check_encoder_kind(index, encoder) -> None:
    if isinstance(index, dense.HnswGraph) and encoder.kind != "dense":
        raise CliError(f"{encoder.kind} encoder cannot query a dense index")
    if isinstance(index, sparse.SparseIndex) and encoder.kind != "sparse":
        raise CliError(f"{encoder.kind} encoder cannot query a sparse index")


def _resolve_queries(args, index) -> list[tuple[str, object]]:
    """Produce (qid, payload) pairs where payload is directly searchable."""
    is_sparse = isinstance(index, sparse.SparseIndex)
    if args.pre_encoded and args.queries:
        raise CliError("give either --queries or --pre-encoded, not both")
    if args.pre_encoded:
        if is_sparse and index.mode == "bm25":
            raise CliError("bm25 indexes take text queries, not pre-encoded vectors")
        table = encoding.load_lookup(args.pre_encoded)
        _check_encoder_kind(index, table)
        return list(table.table.items())
    if not args.queries:
        raise CliError("provide --queries or --pre-encoded")
    pairs = _read_queries_tsv(args.queries)
    if is_sparse and index.mode == "bm25":
        return [(qid, sparse.analyze(text)) for qid, text in pairs]
    if not args.encoder:
        raise CliError("vector indexes need --encoder (or use --pre-encoded)")
    encoder = _build_encoder(args)
    _check_encoder_kind(index, encoder)
    return [(qid, encoder.encode(text)) for qid, text in pairs]


def _search_one(index, payload, k: int, ef_search: int):
    if isinstance(index, dense.HnswGraph):
        return index.search(payload, k, ef_search=max(ef_search, k))
    return index.search(payload, k)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_index(args) -> int:
    t0 = time.perf_counter()
    records = _read_corpus(args.corpus, args.kind)
    if args.kind == "bm25":
        index = sparse.build_bm25_index(
            ((doc_id, tokens) for _, doc_id, tokens in records), k1=args.k1, b=args.b
        )
        index.save(args.output)
        count = index.doc_count
    elif args.kind == "impact":
        def gen():
            for lineno, doc_id, vec in records:
                try:
                    yield doc_id, SparseVector(vec)
                except ValueError as e:
                    raise CliError(f"{args.corpus}:{lineno}: {e}") from e

        index = sparse.build_impact_index(gen(), scale=args.scale)
        index.save(args.output)
        count = index.doc_count
    else:
        if args.threads != 1:
            raise CliError("parallel hnsw builds are not supported; use --threads 1")
        graph = None
        for lineno, doc_id, vec in records:
            if graph is None:
                graph = dense.HnswGraph(
                    dim=len(vec), m=args.m, ef_construction=args.ef_construction, seed=args.seed
                )
            try:
                graph.insert(doc_id, np.asarray(vec, dtype=np.float64))
            except ValueError as e:
                raise CliError(f"{args.corpus}:{lineno}: {e}") from e
        if graph is None:
            raise CliError(f"{args.corpus}: empty corpus")
        graph.save(args.output)
        count = graph.n
    elapsed = time.perf_counter() - t0
    size = os.path.getsize(args.output)
    print(f"indexed {count} docs -> {args.output} ({size} bytes, kind={args.kind}) in {elapsed:.2f}s")
    return 0


def cmd_search(args) -> int:
    index = load_any_index(args.index)
    queries = _resolve_queries(args, index)
    run = fusion.Run(args.tag)
    for qid, payload in queries:
        run.add(qid, _search_one(index, payload, args.k, args.ef_search))
    evaluation.write_run(run, args.output)
    n_hits = sum(len(h) for h in run.hits.values())
    print(f"searched {len(queries)} queries -> {args.output} ({n_hits} hits, k={args.k})")
    return 0


def cmd_fuse(args) -> int:
    run_a = evaluation.parse_run(args.run_a)
    run_b = evaluation.parse_run(args.run_b)
    fused = fusion.average_fuse(run_a, run_b, depth=args.depth, run_tag=args.tag)
    evaluation.write_run(fused, args.output)
    print(f"fused {len(fused)} queries -> {args.output} (depth={args.depth})")
    return 0


def cmd_eval(args) -> int:
    run = evaluation.parse_run(args.run)
    qrels = evaluation.parse_qrels(args.qrels)
    report = evaluation.evaluate(run, qrels, rel_threshold=args.rel_threshold)
    if args.json:
        print(json.dumps({"mean": report.mean, "evaluated": report.evaluated,
                          "per_query": report.per_query}, sort_keys=True))
        return 0
    order = [n for n in ("RR@10", "R@1k", "AP", "nDCG@10") if n in report.mean]
    order += [n for n in report.mean if n not in order]
    header = f"{'run':<20}" + "".join(f"{name:>10}" for name in order)
    row = f"{run.run_tag:<20}" + "".join(f"{report.mean[name]:>10.4f}" for name in order)
    print(header)
    print(row)
    return 0


def cmd_bench(args) -> int:
    if args.stub:
        search_fn = bench_mod.StubEngine(args.stub_delay_ms / 1000.0)
        if args.queries:
            queries: list[tuple[str, object]] = list(_read_queries_tsv(args.queries))
        else:
            queries = [(f"q{i}", f"q{i}") for i in range(1000)]
        condition = "stub"
    else:
        if not args.index:
            raise CliError("--index is required unless --stub is given")
        index = load_any_index(args.index)
        queries = _resolve_queries(args, index)
        if args.pre_encoded:
            condition = "pre-encoded"
        elif args.encoder == "onnx":
            condition = "onnx"
        else:
            condition = args.encoder or "text"
        k, ef = args.k, args.ef_search
        search_fn = lambda payload: _search_one(index, payload, k, ef)  # noqa: E731
    threads = args.threads if args.threads else (os.cpu_count() or 1)
    config = bench_mod.BenchConfig(
        threads=threads,
        warmup_runs=args.warmup,
        measured_runs=args.runs,
        k=args.k,
        condition=f"{condition}/{args.tag}" if args.tag else condition,
        record_latencies=args.record_latencies,
    )
    report = bench_mod.run_benchmark(search_fn, queries, config)
    print(bench_mod.format_table([report]))
    if args.json_out:
        with open(args.json_out, "a", encoding="utf-8") as fh:
            fh.write(report.json_line() + "\n")
        print(f"appended JSON record -> {args.json_out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--queries", help="TSV file of 'qid<TAB>query text'")
    p.add_argument("--pre-encoded", help="pre-encoded query file keyed by qid")
    p.add_argument("--encoder", choices=["lookup", "onnx"], help="query encoder for vector indexes")
    p.add_argument("--encoder-file", help="pre-encoded file keyed by query text (lookup encoder)")
    p.add_argument("--model", help="ONNX model file (onnx encoder)")
    p.add_argument("--vocab", help="vocabulary file, one token per line (onnx encoder)")
    p.add_argument("--head", choices=["dense", "sparse"], default="dense",
                   help="output head of the onnx encoder")
    p.add_argument("--pooling", choices=["start", "mean"], default="start",
                   help="pooling for dense onnx outputs")
    p.add_argument("--prune-threshold", type=float, default=0.0,
                   help="drop sparse onnx weights <= this value")
    p.add_argument("--onnx-backend", choices=["builtin", "onnxruntime"], default="builtin",
                   help="inference backend for the onnx encoder")
    p.add_argument("--max-query-tokens", type=int, default=encoding.DEFAULT_MAX_TOKENS,
                   help="query token cap including [CLS]/[SEP]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lodestone",
        description="Single-stack top-k retrieval: sparse impacts, HNSW, BM25, fusion, eval, bench.",
    )
    parser.add_argument("--config", default=None,
                        help="TOML file with per-subcommand flag defaults; flags win")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("index", help="build an index from a JSONL corpus", formatter_class=fmt)
    p.add_argument("--kind", choices=["bm25", "impact", "hnsw"], required=True,
                   help="index kind the corpus payloads must match")
    p.add_argument("--corpus", required=True, help="JSONL corpus file")
    p.add_argument("--output", required=True, help="index file to write")
    p.add_argument("--scale", type=int, default=100, help="impact quantization scale")
    p.add_argument("--k1", type=float, default=sparse.DEFAULT_K1, help="BM25 k1")
    p.add_argument("--b", type=float, default=sparse.DEFAULT_B, help="BM25 b")
    p.add_argument("--m", type=int, default=dense.DEFAULT_M, help="HNSW max neighbors per layer")
    p.add_argument("--ef-construction", type=int, default=dense.DEFAULT_EF_CONSTRUCTION,
                   help="HNSW construction beam width")
    p.add_argument("--seed", type=int, default=0, help="HNSW level-sampling seed")
    p.add_argument("--threads", type=int, default=1,
                   help="HNSW build threads (only 1 = deterministic is supported)")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="run top-k queries against an index", formatter_class=fmt)
    p.add_argument("--index", required=True, help="index file (kind inferred from magic)")
    _add_encoder_flags(p)
    p.add_argument("--k", type=int, default=1000, help="hits to retrieve per query")
    p.add_argument("--ef-search", type=int, default=dense.DEFAULT_EF_SEARCH,
                   help="HNSW search beam width (raised to k if smaller)")
    p.add_argument("--output", required=True, help="TREC run file to write")
    p.add_argument("--tag", default="lodestone", help="run tag")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("fuse", help="average-fuse two runs", formatter_class=fmt)
    p.add_argument("--run-a", required=True, help="first TREC run file")
    p.add_argument("--run-b", required=True, help="second TREC run file")
    p.add_argument("--depth", type=int, default=fusion.DEFAULT_FUSE_DEPTH,
                   help="truncate inputs and output to this many hits per query")
    p.add_argument("--output", required=True, help="fused TREC run file to write")
    p.add_argument("--tag", default="fusion", help="run tag for the fused run")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="evaluate a run against qrels", formatter_class=fmt)
    p.add_argument("--run", required=True, help="TREC run file")
    p.add_argument("--qrels", required=True, help="qrels file (qid 0 docid grade)")
    p.add_argument("--rel-threshold", type=int, default=evaluation.DEFAULT_REL_THRESHOLD,
                   help="min grade counted relevant for RR/AP/recall")
    p.add_argument("--json", action="store_true", help="emit the full report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure query throughput", formatter_class=fmt)
    p.add_argument("--index", help="index file (omit with --stub)")
    _add_encoder_flags(p)
    p.add_argument("--k", type=int, default=bench_mod.DEFAULT_K, help="hits per query")
    p.add_argument("--ef-search", type=int, default=dense.DEFAULT_EF_SEARCH,
                   help="HNSW search beam width")
    p.add_argument("--threads", type=int, default=0, help="worker threads (0 = logical cores)")
    p.add_argument("--warmup", type=int, default=bench_mod.DEFAULT_WARMUP_RUNS,
                   help="discarded warm-up passes")
    p.add_argument("--runs", type=int, default=bench_mod.DEFAULT_MEASURED_RUNS,
                   help="measured passes")
    p.add_argument("--stub", action="store_true", help="benchmark a fixed-delay stub engine")
    p.add_argument("--stub-delay-ms", type=float, default=1.0, help="stub per-query delay")
    p.add_argument("--record-latencies", action="store_true",
                   help="record raw per-query latencies (summary lands in the JSON record)")
    p.add_argument("--tag", default="", help="extra condition label")
    p.add_argument("--json-out", help="append the report as a JSON line to this file")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config", default=None)
        known, remaining = pre.parse_known_args(argv)
        if known.config:
            _apply_config(parser, known.config)
        args = parser.parse_args(remaining)
        return args.func(args)
    except (CliError, StorageError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
