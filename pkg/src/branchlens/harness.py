"""Benchmark campaign orchestration and report emission.

A campaign runs a workload x mode matrix with repetitions, reconstructs each
captured trace both raw and user-space-filtered, scores it against the
reference execution, and aggregates mean/sample-standard-deviation per cell
with a streaming (Welford) fold. Cells run in a canonical order (workload,
then mode, then repetition), so equal seeds give byte-identical reports in
every non-timing column.

Wall-clock numbers measure the cost of THIS simulation, never hardware
overhead; they are confined to the trailing ``sim_elapsed_ms_mean`` column
(and the JSON-only ``sim_ips_mean``) and are the only nondeterministic
report fields. The slowdown columns are populated exclusively from fixture
or user-supplied timing pairs.

Fixture files carry published baseline numbers (tagged ``paper-fixture``) so
reports can juxtapose simulated results with published measurements; those
rows are never presented as measured by this artifact.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
import time
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path

from . import synth
from .errors import BranchLensError
from .metrics import (
    GraphPair,
    block_coverage,
    edge_coverage,
    jaccard,
    normalized_ged,
    slowdown,
)
from .program import ExecutionScript, StaticCfg, load_cfg, load_script
from .reconstruct import filter_user_space, project_to_ground_truth, reconstruct
from .traceio import write_btrace
from .tracer import SessionConfig, TraceMode, trace_run

VALID_SOURCES = ("simulated", "paper-fixture")

REPORT_COLUMNS = [
    "source", "workload", "args_label", "mode", "trace", "reps",
    "jaccard_mean", "jaccard_std", "nged_mean", "nged_std",
    "block_cov_mean", "block_cov_std", "edge_cov_mean", "edge_cov_std",
    "slowdown_mean", "slowdown_std",
    "instr_total_mean", "records_emitted_mean", "noise_records_mean",
    "drain_count_mean", "dropped_gating_mean", "dropped_overflow_mean",
    "sim_elapsed_ms_mean",
]


class CampaignError(BranchLensError):
    def __init__(self, detail: str):
        super().__init__(f"CampaignError({detail})")


class ParseError(BranchLensError):
    def __init__(self, line: int, detail: str):
        self.line = line
        super().__init__(f"ParseError(line {line}: {detail})")


class EmptyReport(BranchLensError):
    def __init__(self):
        super().__init__("EmptyReport()")


class UntaggedRow(BranchLensError):
    def __init__(self, source):
        super().__init__(f"UntaggedRow({source!r})")


@dataclass(frozen=True)
class Workload:
    name: str
    cfg_path: Path
    script_path: Path
    args_label: str = ""


@dataclass(frozen=True)
class CampaignMode:
    label: str
    config: SessionConfig


@dataclass(frozen=True)
class Campaign:
    workloads: tuple[Workload, ...]
    modes: tuple[CampaignMode, ...]
    repetitions: int
    seed: int
    randomize_scripts: bool = False


@dataclass
class AggregateRow:
    source: str
    workload: str
    args_label: str = ""
    mode: str = ""
    trace: str = ""
    reps: int | None = None
    jaccard_mean: float | None = None
    jaccard_std: float | None = None
    nged_mean: float | None = None
    nged_std: float | None = None
    block_cov_mean: float | None = None
    block_cov_std: float | None = None
    edge_cov_mean: float | None = None
    edge_cov_std: float | None = None
    slowdown_mean: float | None = None
    slowdown_std: float | None = None
    instr_total_mean: float | None = None
    records_emitted_mean: float | None = None
    noise_records_mean: float | None = None
    drain_count_mean: float | None = None
    dropped_gating_mean: float | None = None
    dropped_overflow_mean: float | None = None
    sim_elapsed_ms_mean: float | None = None
    sim_ips_mean: float | None = None  # JSON report only; wall-clock derived


class Welford:
    """Streaming mean and sample standard deviation (n-1 denominator)."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self._m2 += delta * (x - self.mean)

    @property
    def std(self) -> float:
        if self.n < 2:
            return 0.0
        return math.sqrt(self._m2 / (self.n - 1))


# ---------------------------------------------------------------------------
# Campaign files
# ---------------------------------------------------------------------------

def mode_from_dict(doc: dict) -> CampaignMode:
    config = SessionConfig(
        mode=TraceMode(doc.get("mode", "bts")),
        lbr_capacity=int(doc.get("lbr_capacity", 16)),
        bts_capacity=int(doc.get("bts_capacity", 1024)),
        bts_threshold=int(doc["bts_threshold"]) if "bts_threshold" in doc else None,
        noise_records_per_boundary=int(doc.get("noise", 2)),
    )
    label = doc.get("label") or _default_mode_label(config)
    return CampaignMode(label, config)


def _default_mode_label(config: SessionConfig) -> str:
    parts = [config.mode.value]
    if config.mode.has_lbr:
        parts.append(f"l{config.lbr_capacity}")
    if config.mode.has_bts:
        parts.append(f"b{config.bts_capacity}")
    parts.append(f"n{config.noise_records_per_boundary}")
    return "-".join(parts)


def load_campaign(path: str | Path) -> Campaign:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CampaignError(f"{path}: {exc}") from exc
    base = path.parent
    workloads = []
    names = set()
    for w in doc.get("workloads", []):
        name = w["name"]
        if name in names:
            raise CampaignError(f"duplicate workload name {name!r}")
        names.add(name)
        workloads.append(
            Workload(
                name=name,
                cfg_path=base / w["cfg"],
                script_path=base / w["script"],
                args_label=w.get("args_label", ""),
            )
        )
    modes = [mode_from_dict(m) for m in doc.get("modes", [])]
    repetitions = int(doc.get("repetitions", 1))
    if repetitions < 1:
        raise CampaignError("repetitions must be >= 1")
    if not workloads or not modes:
        raise CampaignError("campaign needs at least one workload and one mode")
    return Campaign(
        tuple(workloads),
        tuple(modes),
        repetitions,
        int(doc.get("seed", 0)),
        bool(doc.get("randomize_scripts", False)),
    )


# ---------------------------------------------------------------------------
# Campaign execution
# ---------------------------------------------------------------------------

_METRIC_KEYS = ("jaccard", "nged", "block_cov", "edge_cov")
_STAT_KEYS = (
    "instr_total", "records_emitted", "noise_records", "drain_count",
    "dropped_gating", "dropped_overflow", "sim_elapsed_ms", "sim_ips",
)


def _load_workload(wl: Workload) -> tuple[StaticCfg, ExecutionScript]:
    try:
        return load_cfg(wl.cfg_path), load_script(wl.script_path)
    except (OSError, json.JSONDecodeError, KeyError, ValueError, BranchLensError) as exc:
        raise CampaignError(f"workload '{wl.name}': {exc}") from exc


def run_campaign(campaign: Campaign, keep_traces_dir: str | Path | None = None) -> list[AggregateRow]:
    rows: list[AggregateRow] = []
    for wl in campaign.workloads:
        cfg, base_script = _load_workload(wl)
        for mode in campaign.modes:
            rows.extend(
                _run_cell(campaign, wl, cfg, base_script, mode, keep_traces_dir)
            )
    return rows


def _run_cell(campaign, wl, cfg, base_script, mode, keep_traces_dir):
    metric_aggs = {
        variant: {k: Welford() for k in _METRIC_KEYS} for variant in ("raw", "filtered")
    }
    stat_aggs = {k: Welford() for k in _STAT_KEYS}
    config = replace(mode.config, user_region=cfg.user_region)
    for rep in range(campaign.repetitions):
        script = base_script
        if campaign.randomize_scripts:
            rng = random.Random(f"{campaign.seed}:{wl.name}:{mode.label}:{rep}")
            script = synth.random_script(cfg, rng)
        try:
            t0 = time.perf_counter()
            oracle, raw, stats = trace_run(cfg, script, config)
            elapsed = time.perf_counter() - t0
            ordered = list(reversed(raw)) if config.mode is TraceMode.LBR_ONLY else raw
            if keep_traces_dir is not None:
                dest = Path(keep_traces_dir)
                dest.mkdir(parents=True, exist_ok=True)
                write_btrace(dest / f"{wl.name}-{mode.label}-r{rep}.btrace", ordered)
            variants = {
                "raw": ordered,
                "filtered": filter_user_space(ordered, cfg.user_region),
            }
            for variant, trace in variants.items():
                sub = reconstruct(trace, cfg)
                gt, tr = project_to_ground_truth(sub, oracle)
                pair = GraphPair.from_subgraphs(gt, tr)
                aggs = metric_aggs[variant]
                aggs["jaccard"].add(float(jaccard(pair)))
                aggs["nged"].add(float(normalized_ged(pair)))
                aggs["block_cov"].add(float(block_coverage(pair)))
                if pair.gt_edges:
                    aggs["edge_cov"].add(float(edge_coverage(pair)))
            stat_aggs["instr_total"].add(float(oracle.instruction_total))
            stat_aggs["records_emitted"].add(float(stats.records_emitted))
            stat_aggs["noise_records"].add(float(stats.noise_records))
            stat_aggs["drain_count"].add(float(stats.drain_count))
            stat_aggs["dropped_gating"].add(float(stats.records_dropped_gating))
            stat_aggs["dropped_overflow"].add(float(stats.records_dropped_overflow))
            stat_aggs["sim_elapsed_ms"].add(elapsed * 1e3)
            if elapsed > 0:
                stat_aggs["sim_ips"].add(oracle.instruction_total / elapsed)
        except BranchLensError as exc:
            raise CampaignError(f"workload '{wl.name}': {exc}") from exc

    out = []
    for variant in ("raw", "filtered"):
        aggs = metric_aggs[variant]
        out.append(
            AggregateRow(
                source="simulated",
                workload=wl.name,
                args_label=wl.args_label,
                mode=mode.label,
                trace=variant,
                reps=campaign.repetitions,
                jaccard_mean=aggs["jaccard"].mean,
                jaccard_std=aggs["jaccard"].std,
                nged_mean=aggs["nged"].mean,
                nged_std=aggs["nged"].std,
                block_cov_mean=aggs["block_cov"].mean,
                block_cov_std=aggs["block_cov"].std,
                edge_cov_mean=aggs["edge_cov"].mean if aggs["edge_cov"].n else None,
                edge_cov_std=aggs["edge_cov"].std if aggs["edge_cov"].n else None,
                instr_total_mean=stat_aggs["instr_total"].mean,
                records_emitted_mean=stat_aggs["records_emitted"].mean,
                noise_records_mean=stat_aggs["noise_records"].mean,
                drain_count_mean=stat_aggs["drain_count"].mean,
                dropped_gating_mean=stat_aggs["dropped_gating"].mean,
                dropped_overflow_mean=stat_aggs["dropped_overflow"].mean,
                sim_elapsed_ms_mean=stat_aggs["sim_elapsed_ms"].mean,
                sim_ips_mean=stat_aggs["sim_ips"].mean if stat_aggs["sim_ips"].n else None,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def _cell(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _row_cells(row: AggregateRow) -> list[str]:
    return [_cell(getattr(row, col)) for col in REPORT_COLUMNS]


def _check_rows(rows) -> None:
    if not rows:
        raise EmptyReport()
    for row in rows:
        if row.source not in VALID_SOURCES:
            raise UntaggedRow(row.source)


def emit_report(rows: list[AggregateRow], fmt: str) -> str:
    """Render rows as 'csv' (RFC 4180), 'json', or 'markdown'."""
    _check_rows(rows)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)  # default \r\n line endings per RFC 4180
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(_row_cells(row))
        return buf.getvalue()
    if fmt == "json":
        docs = []
        for row in rows:
            doc = {f.name: getattr(row, f.name) for f in fields(row)}
            docs.append(doc)
        return json.dumps(docs, indent=2) + "\n"
    if fmt == "markdown":
        lines = ["| " + " | ".join(REPORT_COLUMNS) + " |"]
        lines.append("|" + "|".join(" --- " for _ in REPORT_COLUMNS) + "|")
        for row in rows:
            lines.append("| " + " | ".join(_row_cells(row)) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def write_reports(rows: list[AggregateRow], out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for fmt, name in (("csv", "report.csv"), ("json", "report.json"), ("markdown", "report.md")):
        path = out_dir / name
        text = emit_report(rows, fmt)
        if fmt == "csv":
            path.write_bytes(text.encode())
        else:
            path.write_text(text)
        written[fmt] = path
    return written


# ---------------------------------------------------------------------------
# Published baseline fixtures
# ---------------------------------------------------------------------------

_FIXTURE_FLOAT_FIELDS = (
    "slowdown_mean", "slowdown_std", "jaccard_mean", "jaccard_std",
    "nged_mean", "nged_std", "block_cov_mean", "block_cov_std",
    "edge_cov_mean", "edge_cov_std",
)


def default_fixture_path() -> Path:
    return Path(resources.files("branchlens") / "data" / "published_baselines.csv")


def load_baseline_fixtures(path: str | Path) -> list[AggregateRow]:
    """Parse a published-baselines CSV into fixture-tagged rows.

    Rows carrying native_ms/elapsed_ms timings get their slowdown recomputed
    from the timing pair; metric columns are carried through as floats.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(1, str(exc)) from exc
    if not text.strip():
        raise ParseError(1, "empty fixture file")
    reader = csv.DictReader(io.StringIO(text))
    if not reader.fieldnames or "source" not in reader.fieldnames:
        raise ParseError(1, "fixture file needs a 'source' column")
    rows = []
    for rec in reader:
        line = reader.line_num
        source = (rec.get("source") or "").strip()
        if not source:
            raise ParseError(line, "row without a source tag")
        row = AggregateRow(
            source=source,
            workload=(rec.get("workload") or "").strip(),
            args_label=(rec.get("args_label") or "").strip(),
            mode=(rec.get("mode") or "").strip(),
            trace=(rec.get("trace") or "").strip(),
        )
        try:
            for name in _FIXTURE_FLOAT_FIELDS:
                raw = (rec.get(name) or "").strip()
                if raw:
                    setattr(row, name, float(raw))
            native = (rec.get("native_ms") or "").strip()
            elapsed = (rec.get("elapsed_ms") or "").strip()
            if native and elapsed:
                row.slowdown_mean = float(slowdown(Fraction(elapsed), Fraction(native)))
        except (ValueError, ZeroDivisionError, BranchLensError) as exc:
            raise ParseError(line, str(exc)) from exc
        rows.append(row)
    return rows
