"""Seeded synthetic program and script generation.

Programs are laid out as contiguous-ish blocks at increasing addresses.
Fall-through edges always point at the next block, so undecided control flow
drifts toward the final (exitless) block; jump-style edges point forward for
the same reason; only conditional taken edges may point backward, which is
what creates loops. Scripts are produced by actually running the program
once with a recording decision source, so they are total by construction.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import BranchLensError
from .program import (
    BasicBlock,
    BranchKind,
    Edge,
    ExecutionScript,
    StaticCfg,
    build_cfg,
    execute,
    run_events,
)
from .records import Address

_JUMP_KINDS = [
    BranchKind.UNCONDITIONAL,
    BranchKind.CALL,
    BranchKind.RETURN,
    BranchKind.INDIRECT_JUMP,
    BranchKind.SYSCALL,
]

GEN_STEP_CAP = 600


class _RecordingScript:
    """Decision source that draws from an RNG and remembers every answer."""

    def __init__(self, rng: random.Random, p_taken: float):
        self.rng = rng
        self.p_taken = p_taken
        self.decisions: dict[tuple[Address, int], bool] = {}
        self.syscall_sites: frozenset[Address] = frozenset()

    def decision_for(self, block: Address, occurrence: int) -> bool:
        taken = self.rng.random() < self.p_taken
        self.decisions[(block, occurrence)] = taken
        return taken


def random_cfg(rng: random.Random, max_blocks: int = 50, base: Address = 0x1000) -> StaticCfg:
    n = rng.randint(1, max_blocks)
    blocks: list[BasicBlock] = []
    cursor = base
    for _ in range(n):
        count = rng.randint(1, 6)
        blocks.append(BasicBlock(cursor, cursor + count, count))
        cursor += count + rng.choice((0, 0, 0, rng.randint(1, 4)))
    edges: list[Edge] = []
    for i, block in enumerate(blocks):
        last = i == len(blocks) - 1
        if last or rng.random() < 0.04:
            continue  # exitless block: a normal termination point
        style = rng.choices(("cond", "jump", "ft"), weights=(45, 30, 25))[0]
        nxt = blocks[i + 1].start
        if style == "cond":
            edges.append(Edge(block.start, nxt, BranchKind.CONDITIONAL_NOT_TAKEN))
            target = rng.choice(blocks).start  # backward targets make loops
            edges.append(Edge(block.start, target, BranchKind.CONDITIONAL_TAKEN))
        elif style == "jump":
            kind = rng.choice(_JUMP_KINDS)
            target = rng.choice(blocks[i + 1 :]).start
            edges.append(Edge(block.start, target, kind))
        else:
            edges.append(Edge(block.start, nxt, BranchKind.CONDITIONAL_NOT_TAKEN))
    region = (base, blocks[-1].end)
    return build_cfg(blocks, edges, blocks[0].start, region)


def random_script(
    cfg: StaticCfg,
    rng: random.Random,
    p_taken: float = 0.35,
    require_syscall: bool = False,
    max_attempts: int = 12,
) -> ExecutionScript:
    """Record a terminating run's decisions; optionally pin one or more
    syscall sites onto blocks the run actually executes."""
    for attempt in range(max_attempts):
        recorder = _RecordingScript(rng, p_taken if attempt < max_attempts - 1 else 0.0)
        try:
            executed = [
                ev.start
                for ev in run_events(cfg, recorder, max_steps=GEN_STEP_CAP)
                if hasattr(ev, "start")
            ]
        except BranchLensError:
            continue  # step cap blown: retry with fresh draws
        sites: set[Address] = set()
        if require_syscall:
            sites.add(rng.choice(executed))
        for start in set(executed):
            if not require_syscall and rng.random() < 0.08:
                sites.add(start)
        return ExecutionScript(dict(recorder.decisions), frozenset(sites))
    raise RuntimeError("could not generate a terminating script")


@dataclass(frozen=True)
class GeneratedProgram:
    cfg: StaticCfg
    script: ExecutionScript


def random_program(
    seed,
    max_blocks: int = 50,
    require_syscall: bool = False,
    p_taken: float = 0.35,
) -> GeneratedProgram:
    rng = random.Random(seed)
    cfg = random_cfg(rng, max_blocks=max_blocks)
    script = random_script(cfg, rng, p_taken=p_taken, require_syscall=require_syscall)
    # Smoke-check totality before handing the program out.
    execute(cfg, script, max_steps=GEN_STEP_CAP + 1)
    return GeneratedProgram(cfg, script)
