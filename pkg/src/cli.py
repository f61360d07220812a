"""
Command-line interface: `python -m src <command> ...`.

Validation and divergence failures log one ERROR line and exit with code 2.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from src.config import ConfigError, EvalConfig, load_run_config, settings
from src.logging_config import setup_logging
from src.services.dispersion import DispersionError
from src.services.evaluation import (
    EvaluationError,
    PlantedGraphError,
    compression_report,
    evaluate_index,
    storage_report,
)
from src.services.hamming_index import HammingIndex, IndexFormatError, QueryError, bench, topn
from src.services.hashing import TableFormatError, random_table
from src.services.ingestion import IngestionError, load_edge_list
from src.services.training import TrainingError, Variant, ablate, export_checkpoint, train

logger = logging.getLogger(__name__)

EXIT_FAILURE = 2
EXPECTED_ERRORS = (
    ConfigError,
    IngestionError,
    DispersionError,
    TableFormatError,
    IndexFormatError,
    QueryError,
    EvaluationError,
    PlantedGraphError,
    TrainingError,
)


def _emit_json(payload: str) -> None:
    sys.stdout.write(payload + "\n")


def _topn_list(value: str) -> list[int]:
    try:
        return EvalConfig(topn=value).topn
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def cmd_train(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, args.set)
    result = train(config, resume_from=args.resume)
    _emit_json(result.model_dump_json(indent=2, exclude={"history"}))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    index = HammingIndex.load(args.index)
    train_graph = load_edge_list(args.train)
    test_graph = load_edge_list(args.test)
    report = evaluate_index(index, train_graph, test_graph.edges, args.topn, mode=args.mode)
    if args.format == "tsv":
        lines = ["metric\tN\tvalue"]
        lines += [f"recall\t{n}\t{v:.6f}" for n, v in report.recall_at.items()]
        lines += [f"ndcg\t{n}\t{v:.6f}" for n, v in report.ndcg_at.items()]
        sys.stdout.write("\n".join(lines) + "\n")
    else:
        _emit_json(report.model_dump_json(indent=2))
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    index = HammingIndex.load(args.index)
    exclude = None
    if args.exclude is not None:
        split_graph = load_edge_list(args.exclude)
        if args.node < split_graph.n1:
            exclude = split_graph.neighbors(args.node)
            exclude = exclude[exclude < index.n2]
    result = topn(index, args.node, args.topn, exclude=exclude, mode=args.mode)
    lines = [f"{rank}\t{entry.node}\t{entry.score:.6f}" for rank, entry in enumerate(result.entries, start=1)]
    sys.stdout.write("\n".join(lines) + ("\n" if lines else ""))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    if args.index is not None:
        index = HammingIndex.load(args.index)
    elif args.random_candidates is not None:
        table = random_table(args.queries, args.random_candidates, args.d, args.layers, args.seed)
        index = HammingIndex.from_table(table)
    else:
        raise QueryError("bench needs --index or --random-candidates")
    report = bench(index, queries=args.queries, n=args.topn, seed=args.seed)
    _emit_json(report.model_dump_json(indent=2))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, args.set)
    report = ablate(config, args.variant, seeds=args.seeds, bpr_threshold=args.bpr_threshold)
    _emit_json(report.model_dump_json(indent=2, exclude={"runs": {"__all__": {"full", "variant"}}}))
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, args.set) if args.config is not None else None
    table = export_checkpoint(args.checkpoint, args.out, config)
    _emit_json(storage_report(table).model_dump_json(indent=2))
    return 0


def cmd_compression(args: argparse.Namespace) -> int:
    _emit_json(compression_report(args.d, args.layers).model_dump_json(indent=2))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("src.main:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bgch", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--log-level", default=settings.log_level, help="Overrides BGCH_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override one config key")

    p = sub.add_parser("train", help="Train and export a hash table")
    run_options(p)
    p.add_argument("--resume", type=Path, help="Continue from a checkpoint.npz")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Recall@N / NDCG@N of an index on held-out edges")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--train", type=Path, required=True, help="Train split; its edges are excluded from rankings")
    p.add_argument("--topn", type=_topn_list, default=[20, 50, 100])
    p.add_argument("--mode", choices=["weighted", "hamming"], default="weighted")
    p.add_argument("--format", choices=["json", "tsv"], default="json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("query", help="Top-N V2 nodes for one V1 node (TSV)")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--topn", type=int, default=20)
    p.add_argument("--exclude", type=Path, help="Edge list whose neighbours of --node are excluded")
    p.add_argument("--mode", choices=["weighted", "hamming"], default="weighted")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="Hamming vs float32 Top-N latency (JSON)")
    p.add_argument("--index", type=Path)
    p.add_argument("--random-candidates", type=int, help="Benchmark a random table with this many candidates")
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--queries", type=int, default=1000)
    p.add_argument("--topn", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="Full model vs one variant over several seeds")
    run_options(p)
    p.add_argument("--variant", choices=[v.value for v in Variant], required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--bpr-threshold", type=float, help="Also report epochs until the BPR loss drops to this value")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export", help="Write the hash table of a checkpoint")
    run_options(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("compression", help="Analytic size-reduction ratios for (d, L)")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.set_defaults(func=cmd_compression)

    p = sub.add_parser("serve", help="Run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except EXPECTED_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE
