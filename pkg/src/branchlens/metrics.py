"""Similarity, coverage, and overhead metrics between subgraph pairs.

All ratios are computed in exact rational arithmetic (fractions.Fraction);
rendering rounds to 4 decimal places. The Jaccard index pools nodes and
edges into one universe (a single ratio, not an average of two). Graph edit
distance assumes identity-labeled nodes, so exact GED reduces to unit-cost
insert/delete counts: the symmetric differences of the node and edge sets.
Spurious traced elements lower Jaccard and raise GED but never lower the
coverage metrics, which only ask how much of the ground truth was seen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

from .errors import BranchLensError
from .reconstruct import ExecutedSubgraph
from .records import Address


class EmptyGroundTruth(BranchLensError):
    def __init__(self):
        super().__init__("EmptyGroundTruth()")


class EmptyGroundTruthEdges(BranchLensError):
    def __init__(self):
        super().__init__("EmptyGroundTruthEdges()")


class ZeroNativeTime(BranchLensError):
    def __init__(self):
        super().__init__("ZeroNativeTime()")


class ZeroElapsed(BranchLensError):
    def __init__(self):
        super().__init__("ZeroElapsed()")


@dataclass(frozen=True)
class GraphPair:
    gt_nodes: frozenset[Address]
    gt_edges: frozenset[tuple[Address, Address]]
    tr_nodes: frozenset[Address]
    tr_edges: frozenset[tuple[Address, Address]]

    def __post_init__(self):
        for edges, nodes, side in (
            (self.gt_edges, self.gt_nodes, "gt"),
            (self.tr_edges, self.tr_nodes, "tr"),
        ):
            for a, b in edges:
                if a not in nodes or b not in nodes:
                    raise ValueError(f"{side} edge ({a:#x}, {b:#x}) endpoint not in nodes")

    @classmethod
    def from_subgraphs(cls, gt: ExecutedSubgraph, traced: ExecutedSubgraph) -> "GraphPair":
        return cls(gt.nodes, gt.edges, traced.nodes, traced.edges)


def jaccard(pair: GraphPair) -> Fraction:
    """Pooled node+edge intersection over union; both-empty pairs score 1."""
    inter = len(pair.gt_nodes & pair.tr_nodes) + len(pair.gt_edges & pair.tr_edges)
    union = len(pair.gt_nodes | pair.tr_nodes) + len(pair.gt_edges | pair.tr_edges)
    if union == 0:
        return Fraction(1)
    return Fraction(inter, union)


def normalized_ged(pair: GraphPair) -> Fraction:
    """Insert/delete edit count over the ground truth's element count."""
    denom = len(pair.gt_nodes) + len(pair.gt_edges)
    if denom == 0:
        raise EmptyGroundTruth()
    edits = len(pair.gt_nodes ^ pair.tr_nodes) + len(pair.gt_edges ^ pair.tr_edges)
    return Fraction(edits, denom)


def block_coverage(pair: GraphPair) -> Fraction:
    if not pair.gt_nodes:
        raise EmptyGroundTruth()
    return Fraction(len(pair.gt_nodes & pair.tr_nodes), len(pair.gt_nodes))


def edge_coverage(pair: GraphPair) -> Fraction:
    if not pair.gt_edges:
        raise EmptyGroundTruthEdges()
    return Fraction(len(pair.gt_edges & pair.tr_edges), len(pair.gt_edges))


def slowdown(t_instrumented, t_native) -> Fraction:
    """Instrumented over native wall-clock time; unit-agnostic ratio."""
    native = Fraction(t_native)
    if native <= 0:
        raise ZeroNativeTime()
    return Fraction(t_instrumented) / native


def ips(instruction_total: int, elapsed) -> Fraction:
    """Executed instructions per second."""
    span = Fraction(elapsed)
    if span <= 0:
        raise ZeroElapsed()
    return Fraction(instruction_total) / span


def render_ratio(value: Fraction, places: int = 4) -> str:
    return f"{float(value):.{places}f}"


@dataclass(frozen=True)
class MetricReport:
    jaccard: Fraction
    normalized_ged: Fraction
    block_coverage: Fraction
    edge_coverage: Fraction
    slowdown: Fraction | None = None
    ips: Fraction | None = None

    def __post_init__(self):
        for name in ("jaccard", "block_coverage", "edge_coverage"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} {value} outside [0, 1]")
        if self.normalized_ged < 0:
            raise ValueError("normalized_ged must be >= 0")
        if (self.jaccard == 1) != (self.normalized_ged == 0):
            raise ValueError("jaccard == 1 must coincide with normalized_ged == 0")

    @classmethod
    def from_pair(cls, pair: GraphPair, slowdown=None, ips=None) -> "MetricReport":
        return cls(
            jaccard(pair),
            normalized_ged(pair),
            block_coverage(pair),
            edge_coverage(pair),
            slowdown,
            ips,
        )

    def to_dict(self) -> dict:
        doc = {
            "jaccard": render_ratio(self.jaccard),
            "nged": render_ratio(self.normalized_ged),
            "block_cov": render_ratio(self.block_coverage),
            "edge_cov": render_ratio(self.edge_coverage),
        }
        doc["slowdown"] = render_ratio(self.slowdown) if self.slowdown is not None else None
        doc["ips"] = render_ratio(self.ips) if self.ips is not None else None
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv_row(self, workload: str, mode: str) -> list[str]:
        d = self.to_dict()
        return [
            workload,
            mode,
            d["jaccard"],
            d["nged"],
            d["block_cov"],
            d["edge_cov"],
            d["slowdown"] or "",
            d["ips"] or "",
        ]


CSV_COLUMNS = ["workload", "mode", "jaccard", "nged", "block_cov", "edge_cov", "slowdown", "ips"]
