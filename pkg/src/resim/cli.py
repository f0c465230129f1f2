"""Command-line entry point.

Subcommands cover the whole workflow: synthesize or ingest a corpus,
normalize it, build and query vector indexes, run one- or multi-embedder
searches with a pluggable re-ranker, mine training triplets, train the
linear scorer, and evaluate or sweep finished runs.

Conventions shared by every subcommand:

- data and tables go to stdout, diagnostics and progress to stderr;
- every artifact written gets a ``<artifact>.manifest.json`` sibling
  recording the command line, seeds, input digests, and wall-clock time;
- exit codes: 0 success, 1 usage error, 2 data/processing error,
  3 external scorer-service failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from typing import Mapping, Sequence

from . import __version__
from .corpus import (
    CorpusError,
    Pool,
    QuerySet,
    load_corpus,
    load_queries,
    mine_triplets,
    save_corpus,
    save_queries,
    save_triplets,
    load_triplets,
)
from .embed import (
    BUILTIN_EMBEDDERS,
    DEFAULT_DIM,
    DEFAULT_HASH_SEED,
    EmbedError,
    EmbedderSpec,
    get_embedder,
)
from .evaluation import (
    EvalError,
    MetricReport,
    QueryRun,
    evaluate_run,
    generate_synthetic_corpus,
    window_sweep,
)
from .index import (
    IndexError_,
    WindowSource,
    index_pool,
    load_index,
    query_window,
    save_index,
)
from .normalize import (
    DEFAULT_IMM_THRESHOLD,
    NormalizeConfig,
    find_vocabulary_violations,
    load_libc_names,
    normalize_function,
)
from .pipeline import (
    PipelineError,
    SearchConfig,
    ensemble_search,
    prepare_tokens,
    save_run,
    load_run,
    search,
)
from .rerank import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_TIMEOUT,
    ExternalScorer,
    LexicalScorer,
    LinearScorer,
    LinearScorerModel,
    OracleScorer,
    ScorerClient,
    ScorerError,
    ScorerServiceError,
    ScorerTarget,
    TrainConfig,
    train_linear_scorer,
    uniform_model,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SCORER = 3


class CliUsageError(Exception):
    """Bad command line; exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad args; route through our own
    # exception so usage problems map to exit code 1 instead.
    def error(self, message: str) -> None:  # type: ignore[override]
        raise CliUsageError(message)


# ----------------------------------------------------------------------------
# Shared helpers
# ----------------------------------------------------------------------------


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(
    artifact: str,
    args: argparse.Namespace,
    command: str,
    inputs: Sequence[str],
    outputs: Sequence[str],
    seeds: Mapping[str, int] | None = None,
    params: Mapping[str, object] | None = None,
    started: float | None = None,
) -> None:
    """Provenance sidecar for one written artifact.

    Timing and timestamp fields vary run to run by nature; the data artifact
    itself stays byte-identical for identical inputs.
    """
    manifest = {
        "tool": "resim",
        "version": __version__,
        "command": command,
        "argv": list(getattr(args, "_argv", [])),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "wall_clock_seconds": (
            round(time.perf_counter() - started, 6) if started is not None else None
        ),
        "seeds": dict(seeds or {}),
        "params": dict(params or {}),
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": list(outputs),
    }
    with open(artifact + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _norm_cfg(args: argparse.Namespace) -> NormalizeConfig:
    kwargs: dict[str, object] = {}
    threshold = getattr(args, "imm_threshold", None)
    if threshold is not None:
        kwargs["imm_threshold"] = threshold
    libc_path = getattr(args, "libc_names", None)
    if libc_path:
        kwargs["libc_names"] = load_libc_names(libc_path)
    return NormalizeConfig(**kwargs)  # type: ignore[arg-type]


def _parse_embedder(text: str, dim: int, hash_seed: int) -> EmbedderSpec:
    if text in BUILTIN_EMBEDDERS:
        return EmbedderSpec(name=text, dim=dim, params={"seed": hash_seed})
    if text.startswith("external:"):
        path = text[len("external:") :]
        if not path:
            raise CliUsageError("external embedder needs a sidecar path")
        return EmbedderSpec(name="external", params={"path": path})
    known = ", ".join(BUILTIN_EMBEDDERS)
    raise CliUsageError(f"unknown embedder {text!r} (expected {known}, or external:<path>)")


def _make_scorer(
    text: str,
    pool: Pool,
    norm_cfg: NormalizeConfig,
    batch_size: int,
    timeout: float,
) -> tuple[object, ScorerClient | None]:
    """Scorer instance plus the client to close afterwards (external only)."""
    if text == "lexical":
        return LexicalScorer(norm_cfg), None
    if text == "oracle":
        return OracleScorer(pool), None
    if text == "linear":
        return LinearScorer(uniform_model(), norm_cfg), None
    if text.startswith("linear:"):
        path = text[len("linear:") :]
        if not path:
            raise CliUsageError("linear scorer needs a model path (linear:<model.json>)")
        return LinearScorer(LinearScorerModel.load(path), norm_cfg), None
    if text.startswith("external:"):
        try:
            target = ScorerTarget.parse(text[len("external:") :])
        except ScorerError as exc:
            raise CliUsageError(str(exc)) from None
        client = ScorerClient(target, batch_size=batch_size, timeout=timeout)
        return ExternalScorer(client), client
    raise CliUsageError(
        f"unknown scorer {text!r} "
        "(expected lexical, linear, linear:<model.json>, oracle, or "
        "external:<host:port | stdio:command>)"
    )


def _query_ids(args: argparse.Namespace, pool: Pool) -> tuple[list[str], dict[str, str | None]]:
    """(ordered query ids, id -> group) from --query-id or --queries."""
    if bool(args.query_id) == bool(args.queries):
        raise CliUsageError("give exactly one of --query-id or --queries")
    if args.query_id:
        return [args.query_id], {args.query_id: None}
    qs = load_queries(args.queries)
    qs.validate(pool)
    return [e.query_id for e in qs.entries], {e.query_id: e.group for e in qs.entries}


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise CliUsageError(f"{flag} wants a comma-separated integer list") from None
    if not values:
        raise CliUsageError(f"{flag} is empty")
    return values


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    pool, queries = generate_synthetic_corpus(
        classes=args.classes,
        variants_per_class=args.variants,
        mutation_rate=args.mutation_rate,
        seed=args.seed,
    )
    save_corpus(pool, args.out)
    outputs = [args.out]
    if args.queries_out:
        save_queries(queries, args.queries_out)
        outputs.append(args.queries_out)
    params = {
        "classes": args.classes,
        "variants_per_class": args.variants,
        "mutation_rate": args.mutation_rate,
    }
    for artifact in outputs:
        _write_manifest(
            artifact, args, "synth", [], outputs,
            seeds={"seed": args.seed}, params=params, started=t0,
        )
    _say(f"wrote {len(pool)} records ({args.classes} classes) to {args.out}")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    pool = load_corpus(args.input)
    save_corpus(pool, args.out)
    _write_manifest(args.out, args, "ingest", [args.input], [args.out], started=t0)
    _say(f"validated {len(pool)} records into {args.out}")
    return EXIT_OK


def cmd_normalize(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    pool = load_corpus(args.corpus)
    cfg = _norm_cfg(args)
    tokens = prepare_tokens(pool, cfg)
    if args.check:
        bad_total = 0
        for fid in sorted(tokens):
            bad = find_vocabulary_violations(tokens[fid].tokens, cfg)
            for token in bad:
                _say(f"{fid}: vocabulary violation: {token!r}")
            bad_total += len(bad)
        if bad_total:
            _say(f"{bad_total} vocabulary violations")
            return EXIT_DATA
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for fid in sorted(tokens):
                fh.write(json.dumps({"id": fid, "tokens": list(tokens[fid].tokens)}) + "\n")
        _write_manifest(
            args.out, args, "normalize", [args.corpus], [args.out],
            params={"imm_threshold": cfg.imm_threshold}, started=t0,
        )
        _say(f"wrote {len(tokens)} token sequences to {args.out}")
    elif not args.check:
        raise CliUsageError("give --out, --check, or both")
    return EXIT_OK


def cmd_index_build(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    pool = load_corpus(args.corpus)
    cfg = _norm_cfg(args)
    spec = _parse_embedder(args.embedder, args.dim, args.hash_seed)
    index = index_pool(spec, pool, cfg, jobs=args.jobs)
    save_index(index, args.out)
    inputs = [args.corpus]
    if spec.name == "external":
        inputs.append(str(spec.params["path"]))
    _write_manifest(
        args.out, args, "index build", inputs, [args.out],
        seeds={"hash_seed": args.hash_seed},
        params={"embedder": index.embedder.name, "dim": index.dim,
                "imm_threshold": cfg.imm_threshold},
        started=t0,
    )
    _say(f"indexed {len(index.ids)} vectors (dim {index.dim}) into {args.out}")
    return EXIT_OK


def cmd_index_query(args: argparse.Namespace) -> int:
    index = load_index(args.index)
    try:
        vec = index.vector_for(args.query_id)
    except IndexError_:
        if not args.corpus:
            raise IndexError_(
                f"id {args.query_id!r} is not in the index; "
                "pass --corpus to embed it on the fly"
            ) from None
        pool = load_corpus(args.corpus)
        cfg = _norm_cfg(args)
        toks = normalize_function(pool.record(args.query_id), cfg)
        vec = get_embedder(index.embedder).embed(toks)
    window = query_window(index, vec, args.w, args.query_id)
    print(
        json.dumps(
            {
                "query_id": window.query_id,
                "w": window.w,
                "candidates": [[i, s] for i, s in window.candidates],
            }
        )
    )
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    pool = load_corpus(args.corpus)
    cfg_norm = _norm_cfg(args)
    indexes = [load_index(p) for p in args.index]
    qids, _groups = _query_ids(args, pool)
    for qid in qids:
        if qid not in pool.by_id:
            raise CorpusError(f"query id {qid!r} is not in the corpus")
    scorer, client = _make_scorer(
        args.scorer, pool, cfg_norm, args.batch_size, args.timeout
    )
    try:
        cfg = SearchConfig(
            embedders=[ix.embedder for ix in indexes],
            scorer=scorer,  # type: ignore[arg-type]
            w=args.w,
            k=args.k,
            include_self=not args.exclude_self,
            norm_cfg=cfg_norm,
        )
    except PipelineError as exc:
        raise CliUsageError(str(exc)) from None
    tokens = prepare_tokens(pool, cfg_norm) if len(qids) > 1 else None
    results = []
    try:
        for i, qid in enumerate(qids, start=1):
            if len(indexes) == 1:
                result = search(cfg, qid, pool, indexes[0], tokens)
            else:
                result = ensemble_search(cfg, qid, pool, indexes, tokens)
            results.append(result)
            if len(qids) >= 200 and i % 200 == 0:
                _say(f"scored {i}/{len(qids)} queries")
    finally:
        if client is not None:
            client.close()
    if args.out:
        save_run(results, args.out, include_timing=args.include_timing)
        _write_manifest(
            args.out, args, "query",
            [args.corpus] + list(args.index) + ([args.queries] if args.queries else []),
            [args.out],
            params={"w": args.w, "k": args.k, "scorer": args.scorer,
                    "include_self": not args.exclude_self},
            started=t0,
        )
        _say(f"wrote {len(results)} results to {args.out}")
    else:
        for result in results:
            print(json.dumps(result.to_json(include_timing=args.include_timing)))
    return EXIT_OK


def cmd_mine_triplets(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    pool = load_corpus(args.corpus)
    anchors = load_queries(args.anchors)
    sources = [WindowSource(load_index(p)) for p in args.index]
    result = mine_triplets(
        pool,
        anchors,
        sources,
        negatives_per_source=args.negatives_per_source,
        mining_depth=args.mining_depth,
        seed=args.seed,
    )
    save_triplets(result, args.out)
    _write_manifest(
        args.out, args, "mine-triplets",
        [args.corpus, args.anchors] + list(args.index), [args.out],
        seeds={"seed": args.seed},
        params={"negatives_per_source": args.negatives_per_source,
                "mining_depth": args.mining_depth},
        started=t0,
    )
    _say(
        f"mined {len(result.triplets)} triplets from {len(anchors.entries)} anchors"
        + (f" ({len(result.skipped)} skipped: no variant)" if result.skipped else "")
    )
    return EXIT_OK


def cmd_train_scorer(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    pool = load_corpus(args.corpus)
    triplets = load_triplets(args.triplets, pool)
    cfg_norm = _norm_cfg(args)
    cfg = TrainConfig(
        margin=args.margin,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        seed=args.seed,
        shuffle=not args.no_shuffle,
    )
    result = train_linear_scorer(triplets, pool, cfg, cfg_norm)
    result.model.save(args.out)
    _write_manifest(
        args.out, args, "train-scorer", [args.triplets, args.corpus], [args.out],
        seeds={"seed": args.seed},
        params={
            "margin": args.margin,
            "learning_rate": args.learning_rate,
            "epochs": args.epochs,
            "triplet_count": result.triplet_count,
            "initial_mean_loss": result.initial_mean_loss,
            "final_mean_loss": result.final_mean_loss,
        },
        started=t0,
    )
    _say(
        f"trained on {result.triplet_count} triplets: mean margin loss "
        f"{result.initial_mean_loss:.6f} -> {result.final_mean_loss:.6f}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    pool = load_corpus(args.corpus)
    results = load_run(args.run)
    groups: dict[str, str | None] = {}
    if args.queries:
        qs = load_queries(args.queries)
        groups = {e.query_id: e.group for e in qs.entries}
    runs = [
        QueryRun.from_search_result(r, group=groups.get(r.query_id)) for r in results
    ]
    ks = _parse_int_list(args.ks, "--ks")
    baseline = None
    if args.baseline:
        with open(args.baseline, "r", encoding="utf-8") as fh:
            baseline = MetricReport.from_json(json.load(fh))
    report = evaluate_run(
        runs, pool, ks, include_self=not args.exclude_self, baseline=baseline
    )
    print(report.format_table())
    if args.out:
        report.save(args.out)
        _write_manifest(
            args.out, args, "eval",
            [args.run, args.corpus]
            + ([args.queries] if args.queries else [])
            + ([args.baseline] if args.baseline else []),
            [args.out],
            params={"ks": ks, "include_self": not args.exclude_self},
            started=t0,
        )
    return EXIT_OK


def _sweep_common(args: argparse.Namespace, with_metrics: bool):
    pool = load_corpus(args.corpus)
    cfg_norm = _norm_cfg(args)
    indexes = [load_index(p) for p in args.index]
    queries = load_queries(args.queries)
    queries.validate(pool)
    ws = sorted(set(_parse_int_list(args.ws, "--ws")))
    scorer, client = _make_scorer(
        args.scorer, pool, cfg_norm, args.batch_size, args.timeout
    )
    try:
        try:
            cfg = SearchConfig(
                embedders=[ix.embedder for ix in indexes],
                scorer=scorer,  # type: ignore[arg-type]
                w=ws[-1],
                k=args.k,
                include_self=not args.exclude_self,
                norm_cfg=cfg_norm,
            )
        except PipelineError as exc:
            raise CliUsageError(str(exc)) from None
        if args.k > ws[0]:
            raise CliUsageError(f"k ({args.k}) must be <= smallest w ({ws[0]})")
        tokens = prepare_tokens(pool, cfg_norm)
        ks = _parse_int_list(args.ks, "--ks") if getattr(args, "ks", None) else None
        return window_sweep(
            cfg, ws, queries, pool, indexes, tokens,
            ks=ks, with_metrics=with_metrics,
        )
    finally:
        if client is not None:
            client.close()


def _print_sweep_rows(sweep, with_metrics: bool) -> None:
    header = f"{'w':>6} {'t_phi_ms':>10} {'t_sim_ms':>10} {'t_rho_ms':>10} {'overhead%':>10}"
    if with_metrics and sweep.rows[0].report is not None:
        ks = sweep.rows[0].report.ks
        header += "".join(f" {'nDCG@' + str(k):>9}" for k in ks)
    print(header)
    for row in sweep.rows:
        overhead = (
            (row.mean_t_phi + row.mean_t_sim) / row.mean_t_rho * 100.0
            if row.mean_t_rho > 0
            else float("inf")
        )
        line = (
            f"{row.w:>6} {row.mean_t_phi * 1e3:>10.3f} {row.mean_t_sim * 1e3:>10.3f} "
            f"{row.mean_t_rho * 1e3:>10.3f} {overhead:>10.2f}"
        )
        if with_metrics and row.report is not None:
            line += "".join(f" {row.report.mean_ndcg[k]:>9.4f}" for k in row.report.ks)
        print(line)
    print(
        f"fit: t_rho ~= {sweep.slope * 1e3:.6f} ms/candidate * w "
        f"+ {sweep.intercept * 1e3:.3f} ms (R^2 = {sweep.r_squared:.4f})"
    )
    for prev, cur in zip(sweep.rows, sweep.rows[1:]):
        if prev.mean_t_rho > 0:
            print(
                f"t_rho({cur.w}) / t_rho({prev.w}) = "
                f"{cur.mean_t_rho / prev.mean_t_rho:.2f}"
            )


def cmd_sweep(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    sweep = _sweep_common(args, with_metrics=True)
    _print_sweep_rows(sweep, with_metrics=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(sweep.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(
            args.out, args, "sweep",
            [args.corpus, args.queries] + list(args.index), [args.out],
            params={"ws": args.ws, "k": args.k, "scorer": args.scorer},
            started=t0,
        )
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    sweep = _sweep_common(args, with_metrics=False)
    _print_sweep_rows(sweep, with_metrics=False)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(sweep.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(
            args.out, args, "bench",
            [args.corpus, args.queries] + list(args.index), [args.out],
            params={"ws": args.ws, "k": args.k, "scorer": args.scorer},
            started=t0,
        )
    return EXIT_OK


# ----------------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="resim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"resim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    norm = _Parser(add_help=False)
    norm.add_argument(
        "--imm-threshold", type=int, default=DEFAULT_IMM_THRESHOLD,
        help="magnitude above which literals become the immediate placeholder",
    )
    norm.add_argument(
        "--libc-names", default=None, metavar="PATH",
        help="file of library function names to keep verbatim (one per line)",
    )

    scorer = _Parser(add_help=False)
    scorer.add_argument(
        "--scorer", default="lexical",
        help="lexical | linear | linear:<model.json> | oracle | "
        "external:<host:port> | external:stdio:<command>",
    )
    scorer.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE,
                        help="pairs per external-scorer request batch")
    scorer.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT,
                        help="external scorer I/O timeout in seconds")

    p = sub.add_parser("synth", parents=[], help="generate a synthetic corpus")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--variants", type=int, required=True,
                   help="functions per equivalence class")
    p.add_argument("--mutation-rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="corpus JSONL path")
    p.add_argument("--queries-out", default=None,
                   help="also write one query per class (its variant 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate and canonicalize a corpus file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("normalize", parents=[norm],
                       help="tokenize a corpus; optionally check the vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None, help="token JSONL path")
    p.add_argument("--check", action="store_true",
                   help="fail (exit 2) if any raw literal escaped normalization")
    p.set_defaults(func=cmd_normalize)

    p_index = sub.add_parser("index", help="build or query a vector index")
    sub_index = p_index.add_subparsers(dest="index_command", required=True,
                                       parser_class=_Parser)

    p = sub_index.add_parser("build", parents=[norm], help="embed a corpus into an index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="index file path")
    p.add_argument("--embedder", default="bow-hash",
                   help="bow-hash | bigram-hash | external:<vectors.jsonl>")
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--hash-seed", type=int, default=DEFAULT_HASH_SEED)
    p.add_argument("--jobs", type=int, default=1, help="embedding threads")
    p.set_defaults(func=cmd_index_build)

    p = sub_index.add_parser("query", parents=[norm],
                             help="print the top-w window for one query")
    p.add_argument("--index", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("-w", type=int, required=True, help="window width")
    p.add_argument("--corpus", default=None,
                   help="needed only when the query id is not in the index")
    p.set_defaults(func=cmd_index_query)

    p = sub.add_parser("query", parents=[norm, scorer],
                       help="two-stage search: retrieve top-w, re-rank to top-k")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", action="append", required=True,
                   help="index file; repeat for an ensemble")
    p.add_argument("--query-id", default=None)
    p.add_argument("--queries", default=None, help="query-set JSONL")
    p.add_argument("-w", type=int, required=True)
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--exclude-self", action="store_true",
                   help="drop the query itself from its candidates")
    p.add_argument("--include-timing", action="store_true",
                   help="record per-phase timings in the run output")
    p.add_argument("--out", default=None, help="run JSONL (default: stdout)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("mine-triplets", help="mine hard-negative training triplets")
    p.add_argument("--corpus", required=True)
    p.add_argument("--anchors", required=True, help="query-set JSONL of anchor ids")
    p.add_argument("--index", action="append", required=True,
                   help="candidate source index; repeatable")
    p.add_argument("--negatives-per-source", type=int, default=3)
    p.add_argument("--mining-depth", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="triplet JSONL path")
    p.set_defaults(func=cmd_mine_triplets)

    p = sub.add_parser("train-scorer", parents=[norm],
                       help="fit the linear re-ranker on mined triplets")
    p.add_argument("--triplets", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-shuffle", action="store_true",
                   help="keep triplets in file order every epoch")
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(func=cmd_train_scorer)

    p = sub.add_parser("eval", help="score a finished run against ground truth")
    p.add_argument("--run", required=True, help="run JSONL from the query command")
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", default=None,
                   help="query-set JSONL; supplies per-query groups")
    p.add_argument("--ks", default="5,10,20,30", help="comma-separated cutoffs")
    p.add_argument("--baseline", default=None,
                   help="earlier eval report JSON to compute improvement against")
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[norm, scorer],
                       help="re-run a query set across window widths")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", action="append", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--ws", required=True, help="comma-separated window widths")
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--ks", default=None, help="metric cutoffs (default: just k)")
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--out", default=None, help="sweep JSON path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", parents=[norm, scorer],
                       help="timing profile across window widths (no metrics)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", action="append", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--ws", required=True)
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    raw_argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        args = parser.parse_args(raw_argv)
        args._argv = raw_argv
        return args.func(args)
    except CliUsageError as exc:
        _say(f"usage error: {exc}")
        return EXIT_USAGE
    except ScorerServiceError as exc:
        _say(f"scorer service error: {exc}")
        return EXIT_SCORER
    except (
        CorpusError,
        EmbedError,
        IndexError_,
        PipelineError,
        EvalError,
        ScorerError,
        OSError,
    ) as exc:
        _say(f"error: {exc}")
        return EXIT_DATA
    except KeyboardInterrupt:
        _say("interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
