"""Executed-subgraph recovery from a branch-record stream.

Phase two of the workflow: project a time-ordered record stream onto the
static CFG, re-derive the silent fall-through transitions, and produce the
executed subgraph. The user-space address filter lives here too; applying it
before reconstruction removes syscall boundary noise and restores an exact
match with the reference execution.

Sequence-building rules:

  * Record sources map to the block containing them; record targets must
    land exactly on a block start (MidBlockTarget otherwise). Addresses
    outside the user region map to synthetic nodes keyed by the raw address,
    so raw noisy traces stay reconstructable; UnmappedAddress fires only for
    user-range addresses that hit no block.
  * The sequence is anchored at the program entry: the gap from the entry to
    the first record's source is bridged by walking unique fall-through
    successors (hardware logs nothing for a straight-line prefix, but the
    analyst still knows the entry). When that gap cannot be bridged the
    trace is partial (e.g. an LBR window) and the sequence starts at the
    first record's source block instead.
  * Between two user-space records the gap from the previous target to the
    next source is bridged the same way; an unbridgeable gap raises
    AmbiguousFallThrough. Records touching kernel addresses never bridge:
    their synthetic endpoints are appended directly, and their user-space
    sources are skipped (that position is already represented), so noise
    only ever adds kernel-touching nodes and edges.
  * After the last record the walk continues through unique fall-through
    successors until a block without one, recovering the silent tail.

Edges are a set (multiplicity collapsed); block_sequence keeps the order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import BranchLensError
from .program import ExecutionOracle, StaticCfg, format_address, parse_address
from .records import Address, BranchRecord, in_region


class UnmappedAddress(BranchLensError):
    def __init__(self, addr: Address):
        self.addr = addr
        super().__init__(f"UnmappedAddress({addr:#x})")


class AmbiguousFallThrough(BranchLensError):
    def __init__(self, block: Address):
        self.block = block
        super().__init__(f"AmbiguousFallThrough({block:#x})")


class MidBlockTarget(BranchLensError):
    def __init__(self, addr: Address):
        self.addr = addr
        super().__init__(f"MidBlockTarget({addr:#x})")


@dataclass(frozen=True)
class ExecutedSubgraph:
    nodes: frozenset[Address]
    edges: frozenset[tuple[Address, Address]]
    block_sequence: tuple[Address, ...]

    @classmethod
    def from_sequence(cls, seq: Sequence[Address]) -> "ExecutedSubgraph":
        edges = frozenset(zip(seq, seq[1:]))
        return cls(frozenset(seq), edges, tuple(seq))

    def to_dict(self) -> dict:
        return {
            "nodes": [format_address(n) for n in sorted(self.nodes)],
            "edges": [
                [format_address(a), format_address(b)] for a, b in sorted(self.edges)
            ],
            "sequence": [format_address(n) for n in self.block_sequence],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExecutedSubgraph":
        return cls(
            frozenset(parse_address(n) for n in doc["nodes"]),
            frozenset((parse_address(a), parse_address(b)) for a, b in doc["edges"]),
            tuple(parse_address(n) for n in doc["sequence"]),
        )

    def to_dot(self, name: str = "executed") -> str:
        lines = [f"digraph {name} {{"]
        for n in sorted(self.nodes):
            lines.append(f'  "{format_address(n)}";')
        for a, b in sorted(self.edges):
            lines.append(f'  "{format_address(a)}" -> "{format_address(b)}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


def load_subgraph(path: str | Path) -> ExecutedSubgraph:
    return ExecutedSubgraph.from_dict(json.loads(Path(path).read_text()))


def save_subgraph(sub: ExecutedSubgraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(sub.to_dict(), indent=2) + "\n")


def filter_user_space(
    trace: Sequence[BranchRecord], user_region: tuple[Address, Address]
) -> list[BranchRecord]:
    """Keep records whose source AND target lie inside [lo, hi); order
    preserved, input untouched."""
    lo, hi = user_region
    if not lo < hi:
        raise ValueError(f"user_region [{lo:#x}, {hi:#x}) is empty")
    return [
        rec
        for rec in trace
        if in_region(rec.source, user_region) and in_region(rec.target, user_region)
    ]


_SYNTHETIC = "synthetic"
_BLOCK = "block"


def _map_source(cfg: StaticCfg, addr: Address) -> tuple[str, Address]:
    if not in_region(addr, cfg.user_region):
        return _SYNTHETIC, addr
    block = cfg.block_at(addr)
    if block is None:
        raise UnmappedAddress(addr)
    return _BLOCK, block.start


def _map_target(cfg: StaticCfg, addr: Address) -> tuple[str, Address]:
    if not in_region(addr, cfg.user_region):
        return _SYNTHETIC, addr
    block = cfg.block_at(addr)
    if block is None:
        raise UnmappedAddress(addr)
    if block.start != addr:
        # Mid-block targets mean a malformed trace in this model; blocks are
        # never split on the fly.
        raise MidBlockTarget(addr)
    return _BLOCK, block.start


def _unique_fall_through(cfg: StaticCfg, start: Address) -> Address | None:
    succ = cfg.fall_through_successors(start)
    if len(succ) == 1:
        return succ[0]
    return None


def _bridge(cfg: StaticCfg, seq: list[Address], frm: Address, to: Address) -> None:
    """Append the unique fall-through chain from ``frm`` (exclusive) to
    ``to`` (inclusive); raises AmbiguousFallThrough when stuck."""
    cur = frm
    for _ in range(len(cfg.blocks)):
        succ = cfg.fall_through_successors(cur)
        if len(succ) != 1:
            raise AmbiguousFallThrough(cur)
        cur = succ[0]
        seq.append(cur)
        if cur == to:
            return
    raise AmbiguousFallThrough(cur)


def _try_prefix_from_entry(cfg: StaticCfg, first_source: Address) -> list[Address] | None:
    """Fall-through chain entry -> first_source, or None when unreachable."""
    seq = [cfg.entry]
    if first_source == cfg.entry:
        return seq
    cur = cfg.entry
    for _ in range(len(cfg.blocks)):
        nxt = _unique_fall_through(cfg, cur)
        if nxt is None:
            return None
        seq.append(nxt)
        if nxt == first_source:
            return seq
        cur = nxt
    return None


def _walk_tail(cfg: StaticCfg, seq: list[Address]) -> None:
    """Extend through unique fall-throughs; stops quietly where the
    continuation is unknown (no or several fall-through successors)."""
    if not seq or cfg.block_starting(seq[-1]) is None:
        return  # nothing to walk from a synthetic kernel node
    cur = seq[-1]
    for _ in range(len(cfg.blocks)):
        nxt = _unique_fall_through(cfg, cur)
        if nxt is None:
            return
        seq.append(nxt)
        cur = nxt


def reconstruct(trace: Sequence[BranchRecord], cfg: StaticCfg) -> ExecutedSubgraph:
    """Rebuild the executed subgraph from a time-ordered record stream."""
    if not trace:
        seq = [cfg.entry]
        _walk_tail(cfg, seq)
        return ExecutedSubgraph.from_sequence(seq)

    first_kind, first_node = _map_source(cfg, trace[0].source)
    if first_kind is _BLOCK:
        seq = _try_prefix_from_entry(cfg, first_node)
        if seq is None:
            seq = [first_node]  # partial trace: anchor at the first source
    else:
        seq = []

    for rec in trace:
        s_kind, s_node = _map_source(cfg, rec.source)
        t_kind, t_node = _map_target(cfg, rec.target)
        kernel_involved = s_kind is _SYNTHETIC or t_kind is _SYNTHETIC
        if not seq:
            seq.append(s_node)
        elif seq[-1] != s_node:
            if kernel_involved:
                if s_kind is _SYNTHETIC:
                    seq.append(s_node)
                # A user-space source on a kernel-touching record is already
                # represented earlier in the path; appending it again would
                # fabricate a user-to-user edge.
            else:
                _bridge(cfg, seq, seq[-1], s_node)
        if kernel_involved:
            if seq[-1] != t_node:
                seq.append(t_node)
        else:
            seq.append(t_node)

    _walk_tail(cfg, seq)
    return ExecutedSubgraph.from_sequence(seq)


def project_to_ground_truth(
    sub: ExecutedSubgraph, oracle: ExecutionOracle
) -> tuple[ExecutedSubgraph, ExecutedSubgraph]:
    """Pair the oracle's executed subgraph with the traced one for metrics."""
    gt = ExecutedSubgraph(
        frozenset(oracle.executed_blocks),
        oracle.executed_edges,
        oracle.executed_blocks,
    )
    return gt, sub
