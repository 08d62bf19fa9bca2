"""DRAM transaction logs.

Transactions are 64 B.  A log stores contiguous runs as bursts
``(purpose, addr, count, write)``; :meth:`TxLog.transactions` expands them to
individual ``(seq, purpose, addr, rw)`` records.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

TX_BYTES = 64


class Purpose(str, Enum):
    DATA = "Data"
    MAC = "Mac"
    VN = "Vn"
    TREE = "Tree"


@dataclass(frozen=True)
class Transaction:
    seq: int
    purpose: Purpose
    addr: int
    write: bool

    @property
    def rw(self) -> str:
        return "W" if self.write else "R"


class TxLog:
    __slots__ = ("bursts", "counts", "stall_cycles", "verified")

    def __init__(self):
        self.bursts: list[tuple[Purpose, int, int, bool]] = []
        self.counts = {p: 0 for p in Purpose}
        self.stall_cycles = 0.0
        self.verified = True

    def add(self, purpose: Purpose, addr: int, count: int = 1, write: bool = False) -> None:
        if count <= 0:
            return
        self.counts[purpose] += count
        b = self.bursts
        if b:
            p, a, n, w = b[-1]
            if p is purpose and w == write and a + n * TX_BYTES == addr:
                b[-1] = (p, a, n + count, w)
                return
        b.append((purpose, addr, count, write))

    def extend(self, other: "TxLog") -> "TxLog":
        for p, a, n, w in other.bursts:
            self.add(p, a, n, w)
        self.stall_cycles += other.stall_cycles
        self.verified = self.verified and other.verified
        return self

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __len__(self) -> int:
        return self.total

    def count(self, purpose: Purpose, write: bool | None = None) -> int:
        if write is None:
            return self.counts[purpose]
        return sum(n for p, _, n, w in self.bursts if p is purpose and w == write)

    def transactions(self, start_seq: int = 0) -> Iterator[Transaction]:
        seq = start_seq
        for p, a, n, w in self.bursts:
            for i in range(n):
                yield Transaction(seq, p, a + i * TX_BYTES, w)
                seq += 1

    def digest(self) -> str:
        h = hashlib.sha256()
        for p, a, n, w in self.bursts:
            h.update(f"{p.value},{a},{n},{int(w)};".encode())
        h.update(repr(self.stall_cycles).encode())
        return h.hexdigest()

    def __repr__(self) -> str:
        parts = ", ".join(f"{p.value}={n}" for p, n in self.counts.items())
        return f"TxLog({parts}, stall={self.stall_cycles})"
