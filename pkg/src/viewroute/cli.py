"""Command-line surface.

Subcommands: synth, train, encode, index, search, eval, bench, analyze.
Exit codes: 0 success, 2 usage error, 1 runtime error. Every run prints
its seed and effective config; all randomness flows from ``--seed`` (or
the seeds embedded in the config).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis as analysis_mod
from . import bench as bench_mod
from . import index as index_mod
from . import metrics as metrics_mod
from . import plots
from .config import ConfigError, load_run_config
from .dataio import load_corpus, load_queries, load_triplets
from .encoder import (
    dump_embeddings,
    ingest_embeddings,
    load_checkpoint,
)
from .router import RouterParams, route
from .synth import generate, write_synth
from .trainer import DevSet, train


def _print_header(cmd: str, seed, cfg_json: str):
    print(f"viewroute {cmd} seed={seed}")
    print(f"effective config: {cfg_json}")


def _compact(values: dict) -> str:
    return json.dumps(values, sort_keys=True)


# ---------------------------------------------------------------------------
# handlers

def _cmd_synth(args) -> int:
    cfg = load_run_config(args.config, args.set)
    for key, flag in (
        ("n_docs", args.docs), ("views_per_doc", args.views),
        ("n_intents", args.intents), ("dims", args.dims),
        ("ambiguity_rate", args.ambiguity), ("seed", args.seed),
        ("query_views", args.query_views),
    ):
        if flag is not None:
            cfg.apply(f"synth.{key}", flag)
    scfg = cfg.synth_config()
    _print_header("synth", scfg.seed, _compact({"synth": dict(vars(scfg))}))
    data = generate(scfg)
    write_synth(data, args.out)
    if args.write_reference:
        dump_embeddings(Path(args.out) / "reference_views", data.doc_refs)
        dump_embeddings(Path(args.out) / "reference_queries_dev", data.dev_query_refs)
    print(
        f"wrote {len(data.corpus)} docs, {len(data.train_queries)} train / "
        f"{len(data.dev_queries)} dev queries, {len(data.triplets)} triplets "
        f"to {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set)
    if args.seed is not None:
        cfg.apply("train.seed", args.seed)
    if args.steps is not None:
        cfg.apply("train.total_steps", args.steps)
    if args.scorer is not None:
        cfg.apply("train.scorer", args.scorer)
    tcfg = cfg.train_config()
    ecfg = cfg.encoder_config()
    _print_header("train", tcfg.seed, _compact(
        {"train": tcfg.to_dict(), "encoder": ecfg.to_dict()}))

    corpus = load_corpus(args.corpus)
    queries = load_queries(args.queries) if args.queries else None
    triplets = load_triplets(args.triplets, corpus, queries)
    dev = None
    if args.dev_queries and args.dev_qrels:
        dev = DevSet(load_queries(args.dev_queries),
                     metrics_mod.read_qrels(args.dev_qrels))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as log_fh:
        result = train(corpus, triplets, tcfg, encoder_config=ecfg, dev=dev,
                       out_dir=out, log_sink=log_fh)
    (out / "effective_config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    plots.save_training_figure(result.log, out / "training.png")
    if result.best_dev_mrr is not None:
        print(f"best dev mrr@{tcfg.eval_topk}={result.best_dev_mrr:.4f} "
              f"at step {result.best_step}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_encode(args) -> int:
    _print_header("encode", "n/a (deterministic)", _compact({"tower": args.tower}))
    encoder, _ = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    matrices = (
        encoder.encode_text(text, args.tower, owner_id=rec_id)
        for rec_id, text in corpus.records
    )
    n = dump_embeddings(args.out, matrices)
    if encoder.truncation_count:
        print(f"warning: truncated {encoder.truncation_count} over-length inputs",
              file=sys.stderr)
    print(f"encoded {n} records to {args.out}")
    return 0


def _cmd_index(args) -> int:
    cfg = load_run_config(args.config, args.set)
    if args.kind is not None:
        cfg.apply("index.kind", args.kind)
    if args.k is not None:
        cfg.apply("index.k", args.k)
    if args.seed is not None:
        cfg.apply("index.seed", args.seed)
    kind = cfg.get("index.kind")
    k = cfg.get("index.k")
    seed = cfg.get("index.seed")
    _print_header("index", seed, _compact({"index": cfg.values["index"]}))
    matrices = ingest_embeddings(args.embeddings)
    views = [
        index_mod.IndexedView(vm.owner_id, int(vi), vm.rows[vi])
        for vm in matrices
        for vi in vm.valid_indices()
    ]
    idx = index_mod.build(views, kind=kind, k=k, seed=seed)
    index_mod.save(idx, args.out)
    print(f"built {kind} index over {idx.count} vectors "
          f"({len(matrices)} owners) -> {args.out}")
    return 0


def _cmd_search(args) -> int:
    cfg = load_run_config(args.config, args.set)
    for key, flag in (("scorer", args.scorer), ("top_k", args.topk),
                      ("nprobe", args.nprobe)):
        if flag is not None:
            cfg.apply(f"search.{key}", flag)
    scorer = cfg.get("search.scorer")
    top_k = cfg.get("search.top_k")
    nprobe = cfg.get("search.nprobe")
    _print_header("search", "n/a (deterministic)", _compact({"search": cfg.values["search"]}))
    idx = index_mod.load(args.index)
    nprobe_arg = nprobe if idx.kind == "ivf" else None
    encoder, extra = load_checkpoint(args.checkpoint)
    router = RouterParams.from_named(extra) if scorer == "routed" else None
    queries = load_queries(args.queries)
    runs = []
    for qid, text in queries.records:
        qvm = encoder.encode_text(text, "query", owner_id=qid)
        if scorer == "routed":
            rout = route(qvm, router, tau=1.0, epsilon=0.0, train_mode=False)
            res = index_mod.search_routed(idx, qvm, rout, top_k, nprobe_arg)
        elif scorer == "sum_max":
            res = index_mod.search_sum_max(idx, qvm, top_k, nprobe_arg)
        elif scorer == "mean_view":
            res = idx.search(qvm.valid_rows().mean(axis=0), top_k, nprobe_arg)
        elif scorer == "single_view":
            res = idx.search(qvm.rows[0], top_k, nprobe_arg)
        else:
            raise ConfigError(f"--scorer {scorer!r} is not searchable")
        runs.append(metrics_mod.RunList(qid, [(d, s) for d, s, _ in res.hits]))
    metrics_mod.write_run(args.out, runs, tag=scorer)
    print(f"wrote {len(runs)} ranked lists to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    _print_header("eval", "n/a (deterministic)", _compact({"metrics": args.metrics}))
    runs = metrics_mod.read_run(args.run)
    qrels = metrics_mod.read_qrels(args.qrels)
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    means, skipped = metrics_mod.evaluate_runs(runs, qrels, names)
    for name in names:
        print(f"{name}={means[name]:.4f}")
    if skipped:
        print(f"skipped {skipped} queries without positive judgments")
    if args.out:
        payload = {"metrics": means, "skipped": skipped, "queries": len(runs)}
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
    return 0


def _cmd_bench(args) -> int:
    cfg = load_run_config(args.config, args.set)
    if args.topk is not None:
        cfg.apply("search.top_k", args.topk)
    if args.nprobe is not None:
        cfg.apply("search.nprobe", args.nprobe)
    top_k = cfg.get("search.top_k")
    nprobe = cfg.get("search.nprobe")
    _print_header("bench", "n/a (timing run)", _compact({
        "search": cfg.values["search"], "reps": args.reps, "paths": args.paths}))
    idx = index_mod.load(args.index)
    nprobe_arg = nprobe if idx.kind == "ivf" else None
    encoder, extra = load_checkpoint(args.checkpoint)
    router = RouterParams.from_named(extra)
    queries_src = load_queries(args.queries)
    qvms = [encoder.encode_text(text, "query", owner_id=qid)
            for qid, text in queries_src.records]

    def route_fn(q):
        return route(q, router, tau=1.0, epsilon=0.0, train_mode=False).selected

    paths = tuple(p.strip() for p in args.paths.split(",") if p.strip())
    report = bench_mod.bench(idx, qvms, paths=paths, top_k=top_k,
                             nprobe=nprobe_arg, reps=args.reps, route_fn=route_fn)
    Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    plots.save_bench_figure(report, Path(args.out).with_suffix(".png"))
    for name, stats in report.paths.items():
        print(f"{name}: median {stats['median_s_per_query']*1e3:.3f} ms/query, "
              f"{stats['total_vectors_scanned']} vectors scanned")
    for name, value in report.ratios.items():
        print(f"{name}={value:.2f}")
    return 0


def _cmd_analyze(args) -> int:
    cfg = load_run_config(args.config, args.set)
    if args.threshold is not None:
        cfg.apply("analysis.threshold", args.threshold)
    if args.linkage is not None:
        cfg.apply("analysis.linkage", args.linkage)
    threshold = cfg.get("analysis.threshold")
    linkage = cfg.get("analysis.linkage")
    _print_header("analyze", "n/a (deterministic)",
                  _compact({"analysis": cfg.values["analysis"]}))
    matrices = ingest_embeddings(args.embeddings)
    stats = analysis_mod.redundancy_report(matrices, threshold, linkage)
    analysis_mod.write_report_csv(stats, args.out)
    plots.save_cluster_histogram(stats, Path(args.out).with_suffix(".png"))
    if args.assignments:
        reports = {
            vm.owner_id: analysis_mod.agglomerative_cluster(
                analysis_mod.similarity_matrix(vm), threshold, linkage)
            for vm in matrices
        }
        analysis_mod.write_assignments_json(reports, args.assignments)
    print(f"analyzed {len(stats.rows)} inputs: mean clusters "
          f"{stats.mean_clusters:.2f}, median {stats.median_clusters:g}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="viewroute",
        description="Multi-view retrieval with learned single-view routing.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("synth", help="generate a synthetic multi-intent corpus")
    common(p)
    p.add_argument("--docs", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--intents", type=int)
    p.add_argument("--dims", type=int)
    p.add_argument("--ambiguity", type=float)
    p.add_argument("--query-views", type=int, dest="query_views")
    p.add_argument("--seed", type=int)
    p.add_argument("--write-reference", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="train encoder towers plus the router")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--triplets", required=True)
    p.add_argument("--queries", help="query texts for id-based triplets")
    p.add_argument("--dev-queries")
    p.add_argument("--dev-qrels")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--scorer")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("encode", help="dump embeddings for a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--tower", choices=("query", "document"), default="document")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("index", help="build a vector index from an embedding dump")
    common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--kind", choices=("flat", "ivf"))
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_index)

    p = sub.add_parser("search", help="run queries against an index")
    common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--scorer", choices=("routed", "sum_max", "single_view", "mean_view"))
    p.add_argument("--topk", type=int)
    p.add_argument("--nprobe", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_search)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metrics", default="mrr@10,ndcg@10")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("bench", help="time retrieval paths over an index")
    common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--paths", default="sum_max,routed")
    p.add_argument("--topk", type=int)
    p.add_argument("--nprobe", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("analyze", help="view-redundancy clustering report")
    common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--linkage", choices=("average", "complete"))
    p.add_argument("--assignments", help="optional per-owner assignments JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_analyze)

    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse usage errors exit 2
        return int(e.code or 0)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 1
    except Exception as e:  # runtime failures -> exit 1 with a named cause
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
