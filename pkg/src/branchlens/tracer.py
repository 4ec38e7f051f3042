"""Emulated kernel-side branch tracer.

Models the two on-CPU capture mechanisms over the toy executor's event
stream:

  * LBR: a small fixed-size circular register stack (4..32 entries) holding
    the most recent taken branches; each push evicts the oldest entry.
  * BTS: an in-memory ring buffer with an interrupt threshold. When the
    write index reaches the threshold and a drain sink is attached, the sink
    runs synchronously with the buffered batch and the buffer resets. With
    no sink, the buffer fills to capacity and further records are dropped
    (counted, never silently lost).

A TraceSession gates records by privilege: records touching addresses
outside the session's user region are dropped, except boundary-noise records
injected at syscall entry/exit, which model the capture window while the
privilege bit is mid-transition and bypass gating by construction.

Sessions follow a strict Configured -> Active -> Stopped lifecycle driven by
a small command interface (`TraceSession.command`), mirroring an ioctl-style
kernel/user protocol. A session is single-writer; snapshots and drained
batches are fresh lists safe to hand elsewhere.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

from .errors import BranchLensError
from .program import (
    MAX_STEPS_DEFAULT,
    BlockVisit,
    BoundaryCross,
    ExecutionOracle,
    ExecutionScript,
    StaticCfg,
    TakenBranch,
    fold_events,
    run_events,
)
from .records import Address, BoundaryDirection, BranchRecord, U64_MAX, in_region

LBR_CAPACITY_RANGE = (4, 32)
KERNEL_GAP = 0x1000  # offset between the user region edge and synthetic kernel slots


class TraceMode(Enum):
    LBR_ONLY = "lbr"
    BTS_ONLY = "bts"
    BOTH = "both"

    @property
    def has_lbr(self) -> bool:
        return self in (TraceMode.LBR_ONLY, TraceMode.BOTH)

    @property
    def has_bts(self) -> bool:
        return self in (TraceMode.BTS_ONLY, TraceMode.BOTH)


class SessionStatus(Enum):
    CONFIGURED = "configured"
    ACTIVE = "active"
    STOPPED = "stopped"


class IllegalTransition(BranchLensError):
    def __init__(self, status: SessionStatus, cmd: str):
        self.status, self.cmd = status, cmd
        super().__init__(f"IllegalTransition({status.value}, {cmd})")


class BadParams(BranchLensError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"BadParams({detail})")


class SessionNotActive(BranchLensError):
    def __init__(self, cmd: str):
        self.cmd = cmd
        super().__init__(f"SessionNotActive({cmd})")


@dataclass(frozen=True)
class SessionConfig:
    """Full parameterization of one tracing session.

    ``user_region`` may be left None when the config is a reusable mode
    preset; trace_run fills it from the program under test. The BTS
    threshold defaults to capacity - 64 clamped to at least 1.
    """

    mode: TraceMode = TraceMode.BTS_ONLY
    user_region: tuple[Address, Address] | None = None
    lbr_capacity: int = 16
    bts_capacity: int = 1024
    bts_threshold: int | None = None
    noise_records_per_boundary: int = 2

    def resolved_threshold(self) -> int:
        if self.bts_threshold is not None:
            return self.bts_threshold
        return max(1, self.bts_capacity - 64)


def validate_config(config: SessionConfig) -> None:
    lo_cap, hi_cap = LBR_CAPACITY_RANGE
    if config.mode.has_lbr and not lo_cap <= config.lbr_capacity <= hi_cap:
        raise BadParams(f"lbr capacity {config.lbr_capacity} not in [{lo_cap}, {hi_cap}]")
    if config.mode.has_bts:
        if config.bts_capacity < 1:
            raise BadParams(f"bts capacity {config.bts_capacity} must be >= 1")
        threshold = config.resolved_threshold()
        if not 1 <= threshold <= config.bts_capacity:
            raise BadParams(
                f"bts threshold {threshold} not in [1, {config.bts_capacity}]"
            )
    if config.noise_records_per_boundary < 0:
        raise BadParams("noise_records_per_boundary must be >= 0")
    if config.user_region is not None:
        lo, hi = config.user_region
        if not lo < hi:
            raise BadParams(f"user_region [{lo:#x}, {hi:#x}) is empty")
        if config.noise_records_per_boundary > 0:
            # Boundary noise needs addressable space outside the region.
            top_slot = 2 * config.noise_records_per_boundary - 1
            above = hi + KERNEL_GAP + top_slot
            below_ok = lo >= KERNEL_GAP + top_slot + 1
            if above > U64_MAX and not below_ok:
                raise BadParams("user_region leaves no kernel address space for noise")


def boundary_noise_address(user_region: tuple[Address, Address], slot: int) -> Address:
    """Deterministic synthetic kernel-space address for noise record ``slot``.

    Slots 2j / 2j+1 hold the j-th entry target / j-th exit source. Addresses
    sit just above the user region (or just below when that would overflow
    the 64-bit space), so the same boundary reuses the same kernel slots run
    after run.
    """
    lo, hi = user_region
    candidate = hi + KERNEL_GAP + slot
    if candidate <= U64_MAX:
        return candidate
    return lo - KERNEL_GAP - slot


class LbrState:
    """Circular register stack of the most recent taken branches."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._slots: list[BranchRecord | None] = [None] * capacity
        self.tos = -1  # index of the newest entry, -1 while empty
        self._filled = 0

    def push(self, rec: BranchRecord) -> None:
        self.tos = (self.tos + 1) % self.capacity
        self._slots[self.tos] = rec
        self._filled = min(self._filled + 1, self.capacity)

    def snapshot(self) -> list[BranchRecord]:
        """Copy of the stack, newest first; reading does not clear."""
        return [
            self._slots[(self.tos - i) % self.capacity] for i in range(self._filled)
        ]

    @property
    def stack(self) -> list[BranchRecord]:
        """Entries in push order (oldest first, newest last)."""
        return list(reversed(self.snapshot()))


class BtsState:
    """Ring buffer with an interrupt threshold and explicit drain records."""

    def __init__(self, buffer_capacity: int, interrupt_threshold: int):
        self.buffer_capacity = buffer_capacity
        self.interrupt_threshold = interrupt_threshold
        self._buf: list[BranchRecord | None] = [None] * buffer_capacity
        self.index = 0
        self.drained: list[list[BranchRecord]] = []

    def append(self, rec: BranchRecord, sink: Callable | None) -> bool:
        """Store one record; returns False when dropped on overflow."""
        if self.index >= self.buffer_capacity:
            return False  # no sink ever drained us; record lost, caller counts it
        self._buf[self.index] = rec
        self.index += 1
        if sink is not None and self.index >= self.interrupt_threshold:
            batch = self.drain()
            sink(batch)
        return True

    def drain(self) -> list[BranchRecord]:
        """Return and clear all buffered records, in emission order."""
        batch = [self._buf[i] for i in range(self.index)]
        self.index = 0
        self.drained.append(batch)
        return batch


@dataclass
class TracerStats:
    records_emitted: int = 0
    records_dropped_gating: int = 0
    records_dropped_overflow: int = 0
    noise_records: int = 0
    drain_count: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class TraceSession:
    """One tracing run: configuration, lifecycle, buffers, and gating."""

    def __init__(self, config: SessionConfig):
        if config.user_region is None:
            raise BadParams("session requires a user_region")
        validate_config(config)
        self.config = config
        self.status = SessionStatus.CONFIGURED
        self.stats = TracerStats()
        self._sink: Callable | None = None
        self.lbr: LbrState | None = None
        self.bts: BtsState | None = None
        self._build_buffers()

    def _build_buffers(self) -> None:
        cfg = self.config
        self.lbr = LbrState(cfg.lbr_capacity) if cfg.mode.has_lbr else None
        self.bts = (
            BtsState(cfg.bts_capacity, cfg.resolved_threshold())
            if cfg.mode.has_bts
            else None
        )

    # -- command interface -------------------------------------------------

    def command(self, name: str, **params):
        """ioctl-style dispatch: configure/start/stop/read_lbr/drain_bts."""
        handlers = {
            "configure": lambda: self.configure(params["config"]),
            "start": self.start,
            "stop": self.stop,
            "read_lbr": self.read_lbr,
            "drain_bts": self.drain_bts,
        }
        if name not in handlers:
            raise BadParams(f"unknown command {name!r}")
        return handlers[name]()

    def configure(self, config: SessionConfig) -> None:
        if self.status is not SessionStatus.CONFIGURED:
            raise IllegalTransition(self.status, "configure")
        if config.user_region is None:
            config = replace(config, user_region=self.config.user_region)
        validate_config(config)
        self.config = config
        self._build_buffers()

    def start(self) -> None:
        if self.status is not SessionStatus.CONFIGURED:
            raise IllegalTransition(self.status, "start")
        self.status = SessionStatus.ACTIVE

    def stop(self) -> None:
        if self.status is not SessionStatus.ACTIVE:
            raise IllegalTransition(self.status, "stop")
        self.status = SessionStatus.STOPPED

    def read_lbr(self) -> list[BranchRecord]:
        if self.status is SessionStatus.CONFIGURED:
            raise IllegalTransition(self.status, "read_lbr")
        if self.lbr is None:
            raise BadParams("read_lbr on a session without an LBR buffer")
        return self.lbr.snapshot()

    def drain_bts(self) -> list[BranchRecord]:
        if self.status is SessionStatus.CONFIGURED:
            raise IllegalTransition(self.status, "drain_bts")
        if self.bts is None:
            raise BadParams("drain_bts on a session without a BTS buffer")
        batch = self.bts.drain()
        self.stats.drain_count += 1
        return batch

    def attach_drain_sink(self, sink: Callable) -> None:
        """Register the handler invoked synchronously at threshold drains."""
        if self.status is SessionStatus.STOPPED:
            raise IllegalTransition(self.status, "attach_drain_sink")
        self._sink = sink

    # -- record intake ------------------------------------------------------

    def observe_branch(self, rec: BranchRecord) -> None:
        if self.status is not SessionStatus.ACTIVE:
            raise SessionNotActive("observe_branch")
        lo, hi = self.config.user_region
        kernel = not (in_region(rec.source, (lo, hi)) and in_region(rec.target, (lo, hi)))
        self.stats.records_emitted += 1
        if kernel:
            # Privilege gating: the emulated tracer suppresses kernel-mode
            # records; only injected boundary noise bypasses this.
            self.stats.records_dropped_gating += 1
            return
        if rec.kernel_mode:
            rec = replace(rec, kernel_mode=False)
        self._push(rec)

    def observe_boundary(self, direction: BoundaryDirection, site: Address) -> None:
        if self.status is not SessionStatus.ACTIVE:
            raise SessionNotActive("observe_boundary")
        region = self.config.user_region
        for j in range(self.config.noise_records_per_boundary):
            if direction is BoundaryDirection.ENTER:
                rec = BranchRecord(
                    source=site,
                    target=boundary_noise_address(region, 2 * j),
                    predicted=True,
                    kernel_mode=True,
                )
            else:
                rec = BranchRecord(
                    source=boundary_noise_address(region, 2 * j + 1),
                    target=site,
                    predicted=True,
                    kernel_mode=True,
                )
            self.stats.records_emitted += 1
            self.stats.noise_records += 1
            self._push(rec)

    def _push(self, rec: BranchRecord) -> None:
        if self.lbr is not None:
            self.lbr.push(rec)
        if self.bts is not None:
            sink = self._threshold_drain if self._sink is not None else None
            if not self.bts.append(rec, sink):
                self.stats.records_dropped_overflow += 1

    def _threshold_drain(self, batch: list[BranchRecord]) -> None:
        self.stats.drain_count += 1
        self._sink(batch)


def trace_run(
    cfg: StaticCfg,
    script: ExecutionScript,
    config: SessionConfig,
    max_steps: int = MAX_STEPS_DEFAULT,
) -> tuple[ExecutionOracle, list[BranchRecord], TracerStats]:
    """Execute a program while feeding every event through a trace session.

    Returns the execution oracle, the raw captured trace, and tracer stats.
    For BTS-carrying modes the raw trace is the concatenation of all
    threshold-drained batches plus a final drain, in emission order. For
    LBR-only sessions it is the final LBR snapshot, newest first.
    """
    if config.user_region is None:
        config = replace(config, user_region=cfg.user_region)
    session = TraceSession(config)
    batches: list[list[BranchRecord]] = []
    if config.mode.has_bts:
        session.attach_drain_sink(batches.append)
    session.start()

    def tap(ev):
        if isinstance(ev, TakenBranch):
            session.observe_branch(ev.record)
        elif isinstance(ev, BoundaryCross):
            session.observe_boundary(ev.direction, ev.site)

    oracle = fold_events(cfg, run_events(cfg, script, max_steps), tap=tap)
    session.stop()
    if config.mode.has_bts:
        batches.append(session.drain_bts())
        raw = [rec for batch in batches for rec in batch]
    else:
        raw = session.read_lbr()
    return oracle, raw, session.stats


def timed_trace_run(cfg, script, config, max_steps: int = MAX_STEPS_DEFAULT):
    """trace_run plus the wall-clock seconds it took (simulation cost only)."""
    t0 = time.perf_counter()
    oracle, raw, stats = trace_run(cfg, script, config, max_steps)
    return oracle, raw, stats, time.perf_counter() - t0
