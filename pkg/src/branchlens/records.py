"""Branch record primitives shared by the executor, tracer, and trace files."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

Address = int  # abstract byte-granular code address, u64 range

U64_MAX = 2**64 - 1


class BoundaryDirection(Enum):
    ENTER = "enter"  # user -> kernel transition (syscall entry)
    EXIT = "exit"    # kernel -> user transition (syscall return)


@dataclass(frozen=True)
class BranchRecord:
    """One hardware-logged taken branch: (source, target, predicted) triple
    plus the privilege flag derived from the session's user region."""

    source: Address
    target: Address
    predicted: bool = True
    kernel_mode: bool = False


def in_region(addr: Address, region: tuple[Address, Address]) -> bool:
    lo, hi = region
    return lo <= addr < hi
