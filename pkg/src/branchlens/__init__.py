"""branchlens: emulated LBR/BTS branch tracing over a toy program model,
control-flow reconstruction from branch records, and the accuracy/overhead
metrics to judge the result against a deterministic reference execution."""

from .metrics import (
    GraphPair,
    MetricReport,
    block_coverage,
    edge_coverage,
    ips,
    jaccard,
    normalized_ged,
    slowdown,
)
from .program import (
    BasicBlock,
    BranchKind,
    Edge,
    ExecutionOracle,
    ExecutionScript,
    StaticCfg,
    build_cfg,
    execute,
    load_cfg,
    load_script,
)
from .reconstruct import (
    ExecutedSubgraph,
    filter_user_space,
    project_to_ground_truth,
    reconstruct,
)
from .records import BoundaryDirection, BranchRecord
from .tracer import SessionConfig, TraceMode, TraceSession, trace_run

__version__ = "0.1.0"

__all__ = [
    "BasicBlock",
    "BoundaryDirection",
    "BranchKind",
    "BranchRecord",
    "Edge",
    "ExecutedSubgraph",
    "ExecutionOracle",
    "ExecutionScript",
    "GraphPair",
    "MetricReport",
    "SessionConfig",
    "StaticCfg",
    "TraceMode",
    "TraceSession",
    "block_coverage",
    "build_cfg",
    "edge_coverage",
    "execute",
    "filter_user_space",
    "ips",
    "jaccard",
    "load_cfg",
    "load_script",
    "normalized_ged",
    "project_to_ground_truth",
    "reconstruct",
    "slowdown",
    "trace_run",
]
