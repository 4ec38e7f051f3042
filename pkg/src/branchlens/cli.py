"""Command-line front end: trace, reconstruct, metrics, campaign, fixtures.

A thin shell over the library; every behavior here is reachable through
library calls. Domain errors print as one-line diagnostics on stderr and
exit 1; usage errors exit 2. Addresses render as hex everywhere a human
reads them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import harness, metrics, reconstruct as rc, traceio
from .errors import BranchLensError
from .program import load_cfg, load_script
from .reconstruct import ExecutedSubgraph, load_subgraph, save_subgraph
from .tracer import SessionConfig, TraceMode, trace_run

OUT_DIR_ENV = "BRANCHLENS_OUT_DIR"


def _session_config(args) -> SessionConfig:
    mode = TraceMode(args.mode)
    lbr_capacity = 16
    bts_capacity = 1024
    if args.capacity is not None:
        if mode.has_lbr:
            lbr_capacity = args.capacity
        if mode.has_bts:
            bts_capacity = args.capacity
    return SessionConfig(
        mode=mode,
        lbr_capacity=lbr_capacity,
        bts_capacity=bts_capacity,
        bts_threshold=args.threshold,
        noise_records_per_boundary=args.noise,
    )


def _cmd_trace(args) -> int:
    cfg = load_cfg(args.cfg)
    script = load_script(args.script)
    oracle, raw, stats = trace_run(cfg, script, _session_config(args), args.max_steps)
    traceio.write_trace(args.out, raw)
    if args.oracle_out:
        gt = ExecutedSubgraph(
            frozenset(oracle.executed_blocks),
            oracle.executed_edges,
            oracle.executed_blocks,
        )
        save_subgraph(gt, args.oracle_out)
    summary = {
        "records_captured": len(raw),
        "instruction_total": oracle.instruction_total,
        "syscall_count": oracle.syscall_count,
        **stats.as_dict(),
    }
    print(json.dumps(summary))
    return 0


def _cmd_reconstruct(args) -> int:
    cfg = load_cfg(args.cfg)
    trace = traceio.read_trace(args.trace)
    if args.reverse:
        trace = list(reversed(trace))
    if args.filter:
        trace = rc.filter_user_space(trace, cfg.user_region)
    sub = rc.reconstruct(trace, cfg)
    if args.out:
        save_subgraph(sub, args.out)
    else:
        print(json.dumps(sub.to_dict(), indent=2))
    if args.dot:
        Path(args.dot).write_text(sub.to_dot())
    return 0


def _cmd_metrics(args) -> int:
    gt = load_subgraph(args.gt)
    traced = load_subgraph(args.traced)
    pair = metrics.GraphPair.from_subgraphs(gt, traced)
    slowdown = None
    if args.native_ms is not None and args.instrumented_ms is not None:
        slowdown = metrics.slowdown(
            Fraction(args.instrumented_ms), Fraction(args.native_ms)
        )
    ips = None
    if args.instructions is not None and args.elapsed_s is not None:
        ips = metrics.ips(args.instructions, Fraction(args.elapsed_s))
    report = metrics.MetricReport.from_pair(pair, slowdown=slowdown, ips=ips)
    if args.format == "json":
        print(report.to_json())
    elif args.format == "csv":
        import csv as _csv
        import io as _io

        buf = _io.StringIO()
        writer = _csv.writer(buf)
        writer.writerow(metrics.CSV_COLUMNS)
        writer.writerow(report.to_csv_row(args.workload, args.mode))
        sys.stdout.write(buf.getvalue())
    else:
        parts = [
            f"jaccard={metrics.render_ratio(report.jaccard)}",
            f"nged={metrics.render_ratio(report.normalized_ged)}",
            f"block_cov={metrics.render_ratio(report.block_coverage)}",
            f"edge_cov={metrics.render_ratio(report.edge_coverage)}",
        ]
        if report.slowdown is not None:
            parts.append(f"slowdown={metrics.render_ratio(report.slowdown)}")
        if report.ips is not None:
            parts.append(f"ips={metrics.render_ratio(report.ips)}")
        print(" ".join(parts))
    return 0


def _resolve_out_dir(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(OUT_DIR_ENV, "out"))


def _cmd_campaign(args) -> int:
    campaign = harness.load_campaign(args.file)
    if args.seed is not None:
        from dataclasses import replace

        campaign = replace(campaign, seed=args.seed)
    out_dir = _resolve_out_dir(args.out)
    traces_dir = out_dir / "traces" if args.keep_traces else None
    rows = harness.run_campaign(campaign, keep_traces_dir=traces_dir)
    written = harness.write_reports(rows, out_dir)
    for path in written.values():
        print(path)
    return 0


def _cmd_fixtures(args) -> int:
    path = Path(args.file) if args.file else harness.default_fixture_path()
    rows = harness.load_baseline_fixtures(path)
    sys.stdout.write(harness.emit_report(rows, args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchlens",
        description="Emulated LBR/BTS branch tracing, CFG reconstruction, and metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="run a program under an emulated trace session")
    p.add_argument("--cfg", required=True)
    p.add_argument("--script", required=True)
    p.add_argument("--mode", choices=[m.value for m in TraceMode], default="bts")
    p.add_argument("--capacity", type=int, default=None,
                   help="capacity of the active buffer(s); defaults lbr=16 bts=1024")
    p.add_argument("--threshold", type=int, default=None,
                   help="BTS interrupt threshold; default capacity-64, min 1")
    p.add_argument("--noise", type=int, default=2,
                   help="boundary noise records injected per syscall direction")
    p.add_argument("--max-steps", type=int, default=1_000_000)
    p.add_argument("--out", required=True, help=".btrace or .btrace.jsonl path")
    p.add_argument("--oracle-out", default=None,
                   help="also write the reference execution's subgraph JSON")
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("reconstruct", help="rebuild the executed subgraph from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--cfg", required=True)
    p.add_argument("--out", default=None, help="subgraph JSON path (default: stdout)")
    p.add_argument("--dot", default=None, help="also emit Graphviz DOT here")
    p.add_argument("--filter", action="store_true",
                   help="drop records outside the program's user region first")
    p.add_argument("--reverse", action="store_true",
                   help="input is newest-first (e.g. an LBR snapshot)")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("metrics", help="score a traced subgraph against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--traced", required=True)
    p.add_argument("--format", choices=["text", "json", "csv"], default="text")
    p.add_argument("--workload", default="", help="label for csv output")
    p.add_argument("--mode", default="", help="label for csv output")
    p.add_argument("--native-ms", type=float, default=None)
    p.add_argument("--instrumented-ms", type=float, default=None)
    p.add_argument("--instructions", type=int, default=None)
    p.add_argument("--elapsed-s", type=float, default=None)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("campaign", help="run a workload x mode benchmark matrix")
    p.add_argument("--file", required=True, help="campaign JSON")
    p.add_argument("--out", default=None,
                   help=f"output directory (default $%s or ./out)" % OUT_DIR_ENV)
    p.add_argument("--seed", type=int, default=None, help="override the campaign seed")
    p.add_argument("--keep-traces", action="store_true")
    p.set_defaults(func=_cmd_campaign)

    p = sub.add_parser("fixtures", help="render published baseline numbers as a report")
    p.add_argument("--file", default=None, help="fixture CSV (default: bundled)")
    p.add_argument("--format", choices=["csv", "json", "markdown"], default="markdown")
    p.set_defaults(func=_cmd_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BranchLensError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"IOError({exc})", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
