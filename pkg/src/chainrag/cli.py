"""Command-line entry point.

Exit codes: 0 success, 1 pipeline error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from . import corpus as corpus_mod
from .config import ConfigurationError, PipelineConfig, build_gateways, load_config
from .evaluation import EvalReport, ablation_run, cost_report, run_mode, topk_sweep, format_table, write_plot_data
from .gateway import ConfigError, GatewayError
from .pipeline import EMBEDDINGS_FILE, MODES, MODULES, SPARSE_INDEX_FILE, Pipeline, PipelineError, open_dataset
from .retrieval import EmbeddingStore, build_sparse_index
from .strategy import MissingTraceError, strategy_report

logger = logging.getLogger("chainrag")

EXIT_OK, EXIT_PIPELINE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("configuration overrides")
    g.add_argument("--config", help="YAML or JSON config file")
    g.add_argument("--dataset", help="dataset file (or directory for multihop-rag)")
    g.add_argument("--format", choices=corpus_mod.SUPPORTED_FORMATS, help="dataset format tag")
    g.add_argument("--out", help="output directory")
    g.add_argument("--corpus-dir", help="corpus/index directory (default: <out>/corpus)")
    g.add_argument("--k", type=int, help="retrieval depth")
    g.add_argument("--method", choices=("sparse", "dense", "hybrid"))
    g.add_argument("--scope", choices=("local", "global"))
    g.add_argument("--think-mode", choices=("think", "no_think"))
    g.add_argument("--seed", type=int)
    g.add_argument("--sample-size", type=int, help="questions to evaluate (0 = all)")
    g.add_argument("--chunk-size", type=int)
    g.add_argument("--chunk-stride", type=int)
    g.add_argument("--summarize-steps", action="store_true", default=None,
                   help="experimental: compress each chain step to one sentence with the reranker model")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainrag", description="Retrieve, rerank into reasoning order, chain, generate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="ingest a dataset and build retrieval indexes")
    _common(p)

    p = sub.add_parser("query", help="run one question and print every stage")
    _common(p)
    p.add_argument("question")
    p.add_argument("--mode", choices=MODES, default="lir3ag")
    p.add_argument("--json", action="store_true", help="print the run record as JSON")

    p = sub.add_parser("eval", help="evaluate a mode over the dataset")
    _common(p)
    p.add_argument("--mode", choices=MODES, default="lir3ag")
    p.add_argument("--emit-plots", action="store_true")

    p = sub.add_parser("ablate", help="evaluate the full pipeline with modules removed")
    _common(p)
    p.add_argument("--disable", default="", help=f"comma-separated subset of {','.join(MODULES)}")

    p = sub.add_parser("sweep", help="evaluate over several retrieval depths")
    _common(p)
    p.add_argument("--ks", type=_int_list, default=[1, 5, 10])
    p.add_argument("--mode", choices=MODES, default="lir3ag")

    p = sub.add_parser("annotate", help="label reasoning strategies in a think-mode run")
    _common(p)
    p.add_argument("--run", required=True, help="eval output directory")
    p.add_argument("--annotator", choices=("heuristic", "llm", "both"), default="heuristic")

    p = sub.add_parser("cost", help="compare token and latency cost across runs")
    _common(p)
    p.add_argument("--runs", nargs="+", required=True, help="eval output directories")
    p.add_argument("--emit-plots", action="store_true")
    return parser


def resolve_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    d, r, c = config.dataset, config.retrieval, config.chunking
    overrides = [
        (d, "path", args.dataset), (d, "format", args.format),
        (r, "k", args.k), (r, "method", args.method), (r, "scope", args.scope),
        (c, "size", args.chunk_size), (c, "stride", args.chunk_stride),
        (config, "output_dir", args.out), (config, "corpus_dir", args.corpus_dir),
        (config, "think_mode", args.think_mode), (config, "seed", args.seed),
        (config, "summarize_steps", args.summarize_steps),
    ]
    for obj, name, value in overrides:
        if value is not None:
            setattr(obj, name, value)
    if args.sample_size is not None:
        config.sample_size = args.sample_size or None
    return config


def _roles(args, config: PipelineConfig) -> tuple[str, ...]:
    roles = []
    dense = config.retrieval.method != "sparse"
    if args.command == "index" and dense:
        roles.append("embedder")
    if args.command in ("query", "eval", "ablate", "sweep"):
        roles.append("generator")
        mode = getattr(args, "mode", "lir3ag")
        disabled = set(_disabled(args)) if args.command == "ablate" else set()
        if mode == "lir3ag" and ("reranker" not in disabled or config.summarize_steps):
            roles.append("reranker")
        if dense and mode != "direct":
            roles.append("embedder")
    if args.command == "annotate" and args.annotator != "heuristic":
        roles.append("annotator")
    return tuple(roles)


def _disabled(args) -> list[str]:
    names = [x.strip() for x in args.disable.split(",") if x.strip() and x.strip() != "none"]
    unknown = set(names) - set(MODULES)
    if unknown:
        raise UsageError(f"unknown module(s) {sorted(unknown)}; choose from {', '.join(MODULES)}")
    return names


def cmd_index(config: PipelineConfig, args, gateways) -> int:
    if not config.dataset.path:
        raise UsageError("no dataset path; pass --dataset or set dataset.path")
    root = config.resolved_corpus_dir()
    corpus, questions = corpus_mod.ingest_dataset(
        config.dataset.path, config.dataset.format, root, config.chunking.size, config.chunking.stride
    )
    if not corpus.chunks:
        raise UsageError(f"{config.dataset.path} contains no documents")
    stats = build_sparse_index(corpus.chunks)
    (root / SPARSE_INDEX_FILE).write_text(json.dumps(stats.to_json(), sort_keys=True))
    if config.retrieval.method != "sparse":
        EmbeddingStore.build(corpus.chunks, gateways.embedder).save(root / EMBEDDINGS_FILE)
    manifest = corpus_mod.read_manifest(root)
    print(f"indexed {manifest['documents']} documents, {manifest['chunks']} chunks, "
          f"{manifest['questions']} questions -> {root}")
    print(f"manifest hash {manifest['content_hash']}")
    return EXIT_OK


def _print_record(rec, mode: str) -> None:
    if mode != "direct" and rec.retrieved is not None:
        print(f"== retrieved ({len(rec.retrieved)}) ==")
        for r in rec.retrieved:
            print(f"  {r['score']:.4f}  {r['chunk_id']}: {r['text'][:160]}")
    if rec.evidence is not None:
        print(f"== reranked evidence ({len(rec.evidence)}, {rec.rerank_status}) ==")
        for e in rec.evidence:
            print(f"  {e['relevance']:.2f}  {e['chunk_id']}")
    if rec.chain is not None:
        print("== reasoning chain ==")
        print(rec.chain)
    if rec.trace:
        print("== trace ==")
        print(rec.trace)
    print("== answer ==")
    print(rec.answer)
    u = rec.usage_total
    print(f"== usage == input {u['input_tokens']}  output {u['output_tokens']}  latency {rec.latency_ms_total:.1f} ms")
    if rec.flags:
        print(f"flags: {', '.join(rec.flags)}")


def cmd_query(config: PipelineConfig, args, gateways) -> int:
    dataset = open_dataset(config, gateways.embedder)
    pipeline = Pipeline(dataset, gateways, config)
    known = {q.question: q for q in dataset.questions}
    if args.question in known:
        rec = pipeline.run(known[args.question], args.mode)
    else:
        rec = pipeline.query(args.question, args.mode)
    if args.json:
        print(json.dumps(rec.to_dict(), indent=2, ensure_ascii=False))
    else:
        _print_record(rec, args.mode)
    if rec.error:
        print(f"error: {rec.error}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


def _run_dir(config: PipelineConfig, name: str, fingerprint: str) -> Path:
    return Path(config.output_dir) / f"{name}-{fingerprint[:8]}"


def cmd_eval(config: PipelineConfig, args, gateways) -> int:
    dataset = open_dataset(config, gateways.embedder)
    out = _run_dir(config, f"eval-{args.mode}-{config.think_mode}", config.fingerprint(dataset.content_hash))
    report = run_mode(dataset, args.mode, config, gateways, out_dir=out)
    if args.emit_plots:
        write_plot_data(out, [report])
    print((out / "summary.txt").read_text(), end="")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ablate(config: PipelineConfig, args, gateways) -> int:
    disabled = _disabled(args)
    dataset = open_dataset(config, gateways.embedder)
    tag = "+".join(disabled) or "none"
    out = _run_dir(config, f"ablate-{tag}", config.fingerprint(dataset.content_hash))
    ablation_run(dataset, disabled, config, gateways, out_dir=out)
    print((out / "summary.txt").read_text(), end="")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(config: PipelineConfig, args, gateways) -> int:
    if not args.ks or any(k < 1 for k in args.ks):
        raise UsageError("--ks needs one or more integers >= 1")
    dataset = open_dataset(config, gateways.embedder)
    out = _run_dir(config, f"sweep-{args.mode}", config.fingerprint(dataset.content_hash))
    topk_sweep(dataset, args.ks, config, gateways, mode=args.mode, out_dir=out)
    print((out / "sweep.txt").read_text(), end="")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_annotate(config: PipelineConfig, args, gateways) -> int:
    report = EvalReport.load(args.run)
    result = strategy_report(report.records, args.annotator, gateways.annotator)
    out = Path(config.output_dir) / f"annotate-{Path(args.run).name}"
    out.mkdir(parents=True, exist_ok=True)
    payload = dict(result.to_dict(), source_run=str(args.run), source_report=report.fingerprint, annotator=args.annotator)
    (out / "strategy_report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    rows = [[label, result.counts[label], result.fractions[label]] for label in result.counts]
    print(format_table(["label", "count", "fraction"], rows))
    if result.skipped:
        print(f"skipped {result.skipped} records without a trace")
    print(f"wrote {out / 'strategy_report.json'}")
    return EXIT_OK


def cmd_cost(config: PipelineConfig, args, gateways) -> int:
    reports = [EvalReport.load(r) for r in args.runs]
    out = Path(config.output_dir) / "cost"
    print(cost_report(reports, out, emit_plots=args.emit_plots))
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "index": cmd_index, "query": cmd_query, "eval": cmd_eval, "ablate": cmd_ablate,
    "sweep": cmd_sweep, "annotate": cmd_annotate, "cost": cmd_cost,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        config.validate(_roles(args, config))
        gateways = build_gateways(config)
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with FileLock(str(out / ".lock"), timeout=0):
            return COMMANDS[args.command](config, args, gateways)
    except Timeout:
        print(f"error: output directory {config.output_dir} is in use by another process", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ConfigurationError, ConfigError, FileNotFoundError,
            corpus_mod.DatasetFormatError, MissingTraceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, GatewayError, ValueError) as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
