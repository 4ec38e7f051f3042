"""Trace file formats.

Binary ``.btrace``: 8-byte magic ``BLTRACE1``, a u32 little-endian record
count, then 17-byte records: u64 LE source, u64 LE target, one flag byte
(bit0 = predicted, bit1 = kernel_mode, bits 2-7 must be zero).

JSON-lines ``.btrace.jsonl``: one object per record with hex-string
addresses: {"src", "tgt", "predicted", "kernel"}.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable

from .errors import BranchLensError
from .records import BranchRecord, U64_MAX

MAGIC = b"BLTRACE1"
_HEADER = struct.Struct("<I")
_RECORD = struct.Struct("<QQB")

FLAG_PREDICTED = 0x01
FLAG_KERNEL = 0x02


class TraceFormatError(BranchLensError):
    def __init__(self, detail: str):
        super().__init__(f"TraceFormatError({detail})")


def _pack_record(rec: BranchRecord) -> bytes:
    if not (0 <= rec.source <= U64_MAX and 0 <= rec.target <= U64_MAX):
        raise TraceFormatError(f"address out of u64 range in {rec}")
    flags = (FLAG_PREDICTED if rec.predicted else 0) | (FLAG_KERNEL if rec.kernel_mode else 0)
    return _RECORD.pack(rec.source, rec.target, flags)


def write_btrace(path: str | Path, records: Iterable[BranchRecord]) -> None:
    records = list(records)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(len(records)))
        for rec in records:
            fh.write(_pack_record(rec))


def read_btrace(path: str | Path) -> list[BranchRecord]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + _HEADER.size:
        raise TraceFormatError(f"{path}: truncated header")
    if data[: len(MAGIC)] != MAGIC:
        raise TraceFormatError(f"{path}: bad magic {data[:len(MAGIC)]!r}")
    (count,) = _HEADER.unpack_from(data, len(MAGIC))
    body = data[len(MAGIC) + _HEADER.size :]
    if len(body) != count * _RECORD.size:
        raise TraceFormatError(
            f"{path}: expected {count} records ({count * _RECORD.size} bytes), "
            f"got {len(body)} bytes"
        )
    out = []
    for i in range(count):
        src, tgt, flags = _RECORD.unpack_from(body, i * _RECORD.size)
        if flags & ~(FLAG_PREDICTED | FLAG_KERNEL):
            raise TraceFormatError(f"{path}: record {i} has reserved flag bits set")
        out.append(
            BranchRecord(src, tgt, bool(flags & FLAG_PREDICTED), bool(flags & FLAG_KERNEL))
        )
    return out


def write_jsonl(path: str | Path, records: Iterable[BranchRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "src": f"{rec.source:#x}",
                        "tgt": f"{rec.target:#x}",
                        "predicted": rec.predicted,
                        "kernel": rec.kernel_mode,
                    }
                )
                + "\n"
            )


def read_jsonl(path: str | Path) -> list[BranchRecord]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            out.append(
                BranchRecord(
                    int(doc["src"], 16),
                    int(doc["tgt"], 16),
                    bool(doc["predicted"]),
                    bool(doc["kernel"]),
                )
            )
        except (KeyError, ValueError) as exc:
            raise TraceFormatError(f"{path}:{lineno}: {exc}") from exc
    return out


def read_trace(path: str | Path) -> list[BranchRecord]:
    """Read either format, chosen by file suffix (.jsonl -> JSON lines)."""
    if str(path).endswith(".jsonl"):
        return read_jsonl(path)
    return read_btrace(path)


def write_trace(path: str | Path, records: Iterable[BranchRecord]) -> None:
    if str(path).endswith(".jsonl"):
        write_jsonl(path, records)
    else:
        write_btrace(path, records)
