#!/usr/bin/env python3
"""
Codebook Transfer Runner
========================
Source co-clustering -> codebook -> hinge-loss transfer -> evaluation,
driven by a JSON experiment config.

Usage:
    python run_transfer.py run configs/toy.json                    # averaged RMSE/MAE + artifacts
    python run_transfer.py run configs/toy.json --method baseline-mmmf
    python run_transfer.py sweep configs/ml100k_to_ml1m.json --k 25,50,75,100,125,150,175,200
    python run_transfer.py codebook configs/toy.json               # source side only
    python run_transfer.py stats ml-100k/u.data --format tab       # dataset statistics

Global flags (accepted by every subcommand):
    --seed N          replace the split, co-clustering and transfer seeds
    --serial          run protocol repetitions in order on one thread
    --output-dir DIR  override output_dir from the config
    -v, --verbose     debug logging

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical divergence.
On failure a single `error=<Code> message=<text>` line is written to stderr.
"""

import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from codebook_transfer.config import get_log_level, load_config, resolved_echo, with_overrides
from codebook_transfer.contract import EvalReport, Method
from codebook_transfer.errors import TransferError, UsageError
from codebook_transfer.evaluation import (
    DEFAULT_SWEEP,
    REFERENCE_RESULTS,
    SourceCache,
    build_source_pipeline,
    check_against_reference,
    check_sweep_shape,
    cluster_sweep,
    run_protocol,
)
from codebook_transfer.export_artifacts import ArtifactExporter
from codebook_transfer.ingestion import SEPARATORS, DatasetSpec, load, stats

logger = logging.getLogger("run_transfer")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def print_header(text: str):
    """Print a formatted header."""
    print("\n" + "=" * 70)
    print(text)
    print("=" * 70)


def print_section(text: str):
    """Print a section header."""
    print(f"\n--- {text} ---")


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems as UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(message)


def parse_k_list(text: str) -> List[int]:
    """Parse "25,50,75" into [25, 50, 75]; every entry must be a positive integer."""
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part.isdigit() or int(part) < 1:
            raise UsageError(f"malformed cluster list '{text}': expected positive integers separated by commas")
        values.append(int(part))
    return values


def configure_logging(verbose: bool):
    level = logging.DEBUG if verbose else get_log_level()
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _load_experiment(args):
    cfg = load_config(args.config)
    return with_overrides(
        cfg,
        seed=args.seed,
        serial=True if args.serial else None,
        output_dir=args.output_dir,
        method=getattr(args, "method", None),
    )


def display_report(report: EvalReport):
    """Display averaged and per-run scores."""
    print_section("RESULT")
    print(f"  Method: {report.method.value}")
    print(f"  RMSE: {report.rmse:.4f}")
    print(f"  MAE:  {report.mae:.4f}")
    print(f"  Global mean floor: RMSE {report.floor_rmse:.4f}, MAE {report.floor_mae:.4f}")
    print(f"  Test ratings per run: {report.n_test}")

    print_section("RUNS")
    for run in report.per_run:
        print(f"  run {run.run} (seed {run.seed}): rmse={run.rmse:.4f} mae={run.mae:.4f}")


def cmd_run(args) -> int:
    cfg = _load_experiment(args)
    target = load(cfg.target)
    source = load(cfg.source) if cfg.method is Method.PROPOSED else target

    report = run_protocol(
        source, target, cfg.cocluster, cfg.transfer, cfg.split, cfg.runs,
        method=cfg.method,
        cold_start=cfg.cold_start,
        codebook_mode=cfg.codebook_mode,
        serial=cfg.serial,
        max_workers=cfg.max_workers,
        config_echo=resolved_echo(cfg),
        cache=SourceCache(),
    )
    check_against_reference(report, cfg.source.preset, cfg.target.preset)
    written = ArtifactExporter(cfg.output_dir).export_run(report)

    print_header(f"CODEBOOK TRANSFER: {cfg.method.value}")
    display_report(report)
    print_section("ARTIFACTS")
    for path in written:
        print(f"  {path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_experiment(args)
    k_values = parse_k_list(args.k) if args.k else list(DEFAULT_SWEEP)
    source, target = load(cfg.source), load(cfg.target)

    points = cluster_sweep(
        source, target, k_values, cfg.cocluster, cfg.transfer, cfg.split, cfg.runs,
        method=cfg.method,
        cold_start=cfg.cold_start,
        codebook_mode=cfg.codebook_mode,
        serial=cfg.serial,
        max_workers=cfg.max_workers,
        config_echo=resolved_echo(cfg),
        cache=SourceCache(max_entries=len(k_values)),
    )
    if (cfg.source.preset, cfg.target.preset) in REFERENCE_RESULTS and len(points) > 1:
        check_sweep_shape(points)
    written = ArtifactExporter(cfg.output_dir).export_sweep(points)

    print_header("CLUSTER SWEEP")
    for p in points:
        print(f"  k={p.k:<5d} rmse={p.report.rmse:.4f} mae={p.report.mae:.4f}")
    print(f"\nSweep table: {written[0]}")
    return 0


def cmd_codebook(args) -> int:
    cfg = _load_experiment(args)
    source = load(cfg.source)
    pipeline = build_source_pipeline(source, cfg.cocluster, cfg.codebook_mode)
    written = ArtifactExporter(cfg.output_dir).export_codebook(pipeline.codebook, pipeline.factorization)

    print_header("SOURCE CODEBOOK")
    B = pipeline.codebook
    print(f"  Shape: {B.shape[0]} x {B.shape[1]}")
    print(f"  Empty blocks: {B.n_empty_blocks}")
    print(f"  Co-clustering: {pipeline.factorization.n_iters} iterations, "
          f"objective {pipeline.factorization.final_objective:.6g}")
    if B.B.size <= 64:
        print_section("B")
        for row in B.B:
            print("  " + " ".join(f"{v:8.4f}" for v in row))
    print(f"\nCodebook: {written[0]}")
    return 0


def cmd_stats(args) -> int:
    if args.dataset.endswith(".json"):
        cfg = load_config(args.dataset)
        specs = [("source", cfg.source), ("target", cfg.target)]
    else:
        fields = {"path": args.dataset, "preset": args.preset} if args.preset else {"path": args.dataset, "format": args.format}
        try:
            specs = [("dataset", DatasetSpec(**fields))]
        except ValidationError as exc:
            raise UsageError(f"invalid dataset options: {exc.errors()[0]['msg']}")

    for name, spec in specs:
        print_section(f"{name.upper()}: {spec.path}")
        for line in stats(load(spec)).to_lines():
            print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument('--seed', type=int, help='Override every seed in the config')
    common.add_argument('--serial', action='store_true', help='Run repetitions in order on one thread')
    common.add_argument('--output-dir', help='Override output_dir from the config')
    common.add_argument('--verbose', '-v', action='store_true', help='Debug logging')

    parser = _Parser(description="Cross-domain codebook transfer experiments")
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    p = sub.add_parser('run', parents=[common], help='Evaluate one method over repeated splits')
    p.add_argument('config', help='Experiment config (JSON)')
    p.add_argument('--method', choices=[m.value for m in Method], help='Override the configured method')
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser('sweep', parents=[common], help='Sweep k1 = k2 = k')
    p.add_argument('config', help='Experiment config (JSON)')
    p.add_argument('--k', help='Comma-separated cluster counts (default 25,50,...,200)')
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser('codebook', parents=[common], help='Build and export the source codebook only')
    p.add_argument('config', help='Experiment config (JSON)')
    p.set_defaults(handler=cmd_codebook)

    p = sub.add_parser('stats', parents=[common], help='Print dataset statistics')
    p.add_argument('dataset', help='Rating file, or an experiment config to report source and target')
    p.add_argument('--format', choices=sorted(SEPARATORS), default='tab', help='Rating file format')
    p.add_argument('--preset', help='Dataset preset (overrides --format)')
    p.set_defaults(handler=cmd_stats)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose)
        return args.handler(args)
    except TransferError as exc:
        logger.debug("failed with %s", exc.to_dict())
        print(exc.to_line(), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
