"""Toy program model: a static CFG of addressed basic blocks plus a
deterministic reference executor.

The executor is the ground-truth side of the artifact: it walks the CFG under
a replayable decision script and emits the authoritative stream of run events
(block visits, taken-branch records, syscall boundary crossings). Everything
downstream (tracing, reconstruction, metrics) is judged against its output.

Conventions:
  * A taken control transfer emits exactly one branch record whose source is
    the last instruction slot of the exiting block (``end - 1``) and whose
    target is the successor's start.
  * Fall-through transitions (kind ``CONDITIONAL_NOT_TAKEN``) are silent,
    matching hardware that records taken branches only.
  * Script decisions are keyed by (block start, 1-based visit number).
  * A block with no outgoing edges terminates the run; that is the only
    normal termination.
"""

from __future__ import annotations

import bisect
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import BranchLensError
from .records import Address, BoundaryDirection, BranchRecord

MAX_STEPS_DEFAULT = 1_000_000


class BranchKind(Enum):
    CONDITIONAL_TAKEN = "conditional_taken"
    CONDITIONAL_NOT_TAKEN = "conditional_not_taken"
    UNCONDITIONAL = "unconditional"
    INDIRECT_JUMP = "indirect_jump"
    CALL = "call"
    RETURN = "return"
    SYSCALL = "syscall"


#: The only silent branch kind; everything else is a taken transfer.
FALL_THROUGH = BranchKind.CONDITIONAL_NOT_TAKEN


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class OverlappingBlocks(BranchLensError):
    def __init__(self, first: "BasicBlock", second: "BasicBlock"):
        self.first, self.second = first, second
        super().__init__(
            f"OverlappingBlocks({first.start:#x}-{first.end:#x}, "
            f"{second.start:#x}-{second.end:#x})"
        )


class DanglingEdge(BranchLensError):
    def __init__(self, addr: Address):
        self.addr = addr
        super().__init__(f"DanglingEdge({addr:#x})")


class EntryNotABlock(BranchLensError):
    def __init__(self, addr: Address):
        self.addr = addr
        super().__init__(f"EntryNotABlock({addr:#x})")


class BlockOutsideUserRegion(BranchLensError):
    def __init__(self, block: "BasicBlock", region: tuple[Address, Address]):
        self.block, self.region = block, region
        super().__init__(
            f"BlockOutsideUserRegion({block.start:#x}-{block.end:#x}, "
            f"region [{region[0]:#x}, {region[1]:#x}))"
        )


class InvalidUserRegion(BranchLensError):
    def __init__(self, lo: Address, hi: Address):
        self.lo, self.hi = lo, hi
        super().__init__(f"InvalidUserRegion({lo:#x}, {hi:#x})")


class ScriptExhausted(BranchLensError):
    def __init__(self, block: Address, occurrence: int):
        self.block, self.occurrence = block, occurrence
        super().__init__(f"ScriptExhausted({block:#x}, occurrence {occurrence})")


class StepLimitExceeded(BranchLensError):
    def __init__(self, limit: int):
        self.limit = limit
        super().__init__(f"StepLimitExceeded({limit})")


class NoSuccessor(BranchLensError):
    def __init__(self, block: Address):
        self.block = block
        super().__init__(f"NoSuccessor({block:#x})")


class AmbiguousSuccessor(BranchLensError):
    # Defensive: reached when a block offers more than one followable exit
    # for the current decision (e.g. a multi-target indirect jump, which a
    # boolean decision script cannot disambiguate).
    def __init__(self, block: Address):
        self.block = block
        super().__init__(f"AmbiguousSuccessor({block:#x})")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class BasicBlock:
    start: Address
    end: Address  # exclusive
    instruction_count: int

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"block start {self.start:#x} must precede end {self.end:#x}")
        if self.instruction_count < 1:
            raise ValueError("instruction_count must be >= 1")

    def contains(self, addr: Address) -> bool:
        return self.start <= addr < self.end

    @property
    def last_slot(self) -> Address:
        """Address of the final instruction slot; branch sources use this."""
        return self.end - 1


@dataclass(frozen=True)
class Edge:
    source: Address  # block start
    target: Address  # block start
    kind: BranchKind

    def sort_key(self):
        return (self.source, self.target, self.kind.value)


@dataclass(frozen=True)
class StaticCfg:
    blocks: tuple[BasicBlock, ...]  # sorted by start
    edges: frozenset[Edge]
    entry: Address
    user_region: tuple[Address, Address]
    _by_start: dict = field(init=False, repr=False, compare=False)
    _out: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_start", {b.start: b for b in self.blocks})
        out: dict[Address, list[Edge]] = {b.start: [] for b in self.blocks}
        for e in sorted(self.edges, key=Edge.sort_key):
            out[e.source].append(e)
        object.__setattr__(self, "_out", out)

    def block_starting(self, addr: Address) -> BasicBlock | None:
        return self._by_start.get(addr)

    def block_at(self, addr: Address) -> BasicBlock | None:
        """Block whose address range contains ``addr``, if any."""
        i = bisect.bisect_right(self.blocks, addr, key=lambda b: b.start)
        if i and self.blocks[i - 1].contains(addr):
            return self.blocks[i - 1]
        return None

    def out_edges(self, start: Address) -> list[Edge]:
        return self._out[start]

    def fall_through_successors(self, start: Address) -> list[Address]:
        return [e.target for e in self._out.get(start, []) if e.kind is FALL_THROUGH]


@dataclass(frozen=True)
class ExecutionScript:
    """Replayable branch decisions plus the set of blocks that issue a
    syscall on exit. Decisions are total for the run they drive."""

    decisions: Mapping[tuple[Address, int], bool]
    syscall_sites: frozenset[Address] = frozenset()

    def decision_for(self, block: Address, occurrence: int) -> bool:
        key = (block, occurrence)
        if key not in self.decisions:
            raise ScriptExhausted(block, occurrence)
        return self.decisions[key]


@dataclass(frozen=True)
class ExecutionOracle:
    """Ground truth for one run: ordered branch records, the executed block
    path, the executed edge set, and scalar tallies."""

    branch_events: tuple[BranchRecord, ...]
    executed_blocks: tuple[Address, ...]
    executed_edges: frozenset[tuple[Address, Address]]
    instruction_total: int
    syscall_count: int


# Run events produced by the executor, in execution order.

@dataclass(frozen=True)
class BlockVisit:
    start: Address


@dataclass(frozen=True)
class TakenBranch:
    record: BranchRecord


@dataclass(frozen=True)
class BoundaryCross:
    direction: BoundaryDirection
    site: Address  # start of the syscalling block


RunEvent = BlockVisit | TakenBranch | BoundaryCross


# ---------------------------------------------------------------------------
# Construction and validation
# ---------------------------------------------------------------------------

def build_cfg(
    blocks: Iterable[BasicBlock],
    edges: Iterable[Edge],
    entry: Address,
    user_region: tuple[Address, Address],
) -> StaticCfg:
    """Validate and assemble a static CFG.

    Raises OverlappingBlocks, DanglingEdge, EntryNotABlock,
    BlockOutsideUserRegion, or InvalidUserRegion naming the offender.
    """
    lo, hi = user_region
    if not lo < hi:
        raise InvalidUserRegion(lo, hi)
    ordered = tuple(sorted(blocks, key=lambda b: b.start))
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start < prev.end:
            raise OverlappingBlocks(prev, cur)
    starts = {b.start for b in ordered}
    for b in ordered:
        if b.start < lo or b.end > hi:
            raise BlockOutsideUserRegion(b, user_region)
    edge_set = frozenset(edges)
    for e in sorted(edge_set, key=Edge.sort_key):
        if e.source not in starts:
            raise DanglingEdge(e.source)
        if e.target not in starts:
            raise DanglingEdge(e.target)
    if entry not in starts:
        raise EntryNotABlock(entry)
    return StaticCfg(ordered, edge_set, entry, (lo, hi))


# ---------------------------------------------------------------------------
# Reference executor
# ---------------------------------------------------------------------------

def _select_successor(script, start: Address, occurrence: int, out: list[Edge]) -> Edge:
    fall = [e for e in out if e.kind is FALL_THROUGH]
    taken = [e for e in out if e.kind is not FALL_THROUGH]
    conditional = any(e.kind is BranchKind.CONDITIONAL_TAKEN for e in out) or (fall and taken)
    if conditional:
        if script.decision_for(start, occurrence):
            if not taken:
                raise NoSuccessor(start)
            if len(taken) > 1:
                raise AmbiguousSuccessor(start)
            return taken[0]
        if not fall:
            raise NoSuccessor(start)
        if len(fall) > 1:
            raise AmbiguousSuccessor(start)
        return fall[0]
    if taken:
        if len(taken) > 1:
            raise AmbiguousSuccessor(start)
        return taken[0]
    if len(fall) > 1:
        raise AmbiguousSuccessor(start)
    return fall[0]


def run_events(
    cfg: StaticCfg, script, max_steps: int = MAX_STEPS_DEFAULT
) -> Iterator[RunEvent]:
    """Walk the CFG under ``script``, yielding events in execution order.

    ``script`` needs only ``decision_for(block, occurrence)`` and
    ``syscall_sites``; occurrence numbers count every visit of a block,
    starting at 1. At a syscall exit the two boundary crossings are yielded
    before the block's taken-branch record (if its exit is a taken edge).
    """
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    block = cfg.block_starting(cfg.entry)
    if block is None:
        raise EntryNotABlock(cfg.entry)
    visits: Counter[Address] = Counter()
    steps = 0
    while True:
        steps += 1
        if steps > max_steps:
            raise StepLimitExceeded(max_steps)
        yield BlockVisit(block.start)
        out = cfg.out_edges(block.start)
        if not out:
            return  # closed program: exitless block ends the run normally
        visits[block.start] += 1
        edge = _select_successor(script, block.start, visits[block.start], out)
        if block.start in script.syscall_sites or edge.kind is BranchKind.SYSCALL:
            yield BoundaryCross(BoundaryDirection.ENTER, block.start)
            yield BoundaryCross(BoundaryDirection.EXIT, block.start)
        if edge.kind is not FALL_THROUGH:
            # Toy predictor always predicts taken, so every recorded (taken)
            # branch carries predicted=True.
            yield TakenBranch(BranchRecord(block.last_slot, edge.target))
        block = cfg.block_starting(edge.target)


def fold_events(cfg: StaticCfg, events: Iterable[RunEvent], tap=None) -> ExecutionOracle:
    """Fold a run-event stream into an ExecutionOracle.

    ``tap`` (if given) sees every event after it is accounted, letting the
    tracer observe the run without a second execution.
    """
    records: list[BranchRecord] = []
    path: list[Address] = []
    edges: set[tuple[Address, Address]] = set()
    instr = 0
    syscalls = 0
    for ev in events:
        if isinstance(ev, BlockVisit):
            if path:
                edges.add((path[-1], ev.start))
            path.append(ev.start)
            instr += cfg.block_starting(ev.start).instruction_count
        elif isinstance(ev, TakenBranch):
            records.append(ev.record)
        elif ev.direction is BoundaryDirection.ENTER:
            syscalls += 1
        if tap is not None:
            tap(ev)
    # Conservation check: the running tally must equal the blockwise sum.
    by_block = Counter(path)
    recount = sum(cfg.block_starting(s).instruction_count * n for s, n in by_block.items())
    assert instr == recount, "instruction conservation violated"
    return ExecutionOracle(tuple(records), tuple(path), frozenset(edges), instr, syscalls)


def execute(
    cfg: StaticCfg, script: ExecutionScript, max_steps: int = MAX_STEPS_DEFAULT
) -> ExecutionOracle:
    """Deterministic reference execution; pure in (cfg, script, max_steps)."""
    return fold_events(cfg, run_events(cfg, script, max_steps))


# ---------------------------------------------------------------------------
# JSON interchange (hex-string addresses)
# ---------------------------------------------------------------------------

def parse_address(value) -> Address:
    if isinstance(value, str):
        return int(value, 16)
    raise ValueError(f"address must be a hex string, got {value!r}")


def format_address(addr: Address) -> str:
    return f"{addr:#x}"


def cfg_to_dict(cfg: StaticCfg) -> dict:
    return {
        "blocks": [
            {"start": format_address(b.start), "end": format_address(b.end),
             "instr": b.instruction_count}
            for b in cfg.blocks
        ],
        "edges": [
            {"src": format_address(e.source), "dst": format_address(e.target),
             "kind": e.kind.value}
            for e in sorted(cfg.edges, key=Edge.sort_key)
        ],
        "entry": format_address(cfg.entry),
        "user_region": {
            "lo": format_address(cfg.user_region[0]),
            "hi": format_address(cfg.user_region[1]),
        },
    }


def cfg_from_dict(doc: dict) -> StaticCfg:
    blocks = [
        BasicBlock(parse_address(b["start"]), parse_address(b["end"]), int(b["instr"]))
        for b in doc["blocks"]
    ]
    edges = [
        Edge(parse_address(e["src"]), parse_address(e["dst"]), BranchKind(e["kind"]))
        for e in doc["edges"]
    ]
    region = (parse_address(doc["user_region"]["lo"]), parse_address(doc["user_region"]["hi"]))
    return build_cfg(blocks, edges, parse_address(doc["entry"]), region)


def script_to_dict(script: ExecutionScript) -> dict:
    return {
        "decisions": [
            {"block": format_address(block), "occurrence": occ, "taken": taken}
            for (block, occ), taken in sorted(script.decisions.items())
        ],
        "syscall_sites": [format_address(s) for s in sorted(script.syscall_sites)],
    }


def script_from_dict(doc: dict) -> ExecutionScript:
    decisions = {
        (parse_address(d["block"]), int(d["occurrence"])): bool(d["taken"])
        for d in doc.get("decisions", [])
    }
    sites = frozenset(parse_address(s) for s in doc.get("syscall_sites", []))
    return ExecutionScript(decisions, sites)


def load_cfg(path: str | Path) -> StaticCfg:
    return cfg_from_dict(json.loads(Path(path).read_text()))


def load_script(path: str | Path) -> ExecutionScript:
    return script_from_dict(json.loads(Path(path).read_text()))


def save_cfg(cfg: StaticCfg, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg_to_dict(cfg), indent=2) + "\n")


def save_script(script: ExecutionScript, path: str | Path) -> None:
    Path(path).write_text(json.dumps(script_to_dict(script), indent=2) + "\n")
