"""Simulated DRAM behind the three memory-protection engines.

``PlainMemory``     no protection (NP): plaintext, data traffic only.
``GuardNNMemory``   counter-mode encryption with VNs supplied by the caller
                    from on-chip counters; optional per-512-B-chunk MACs kept
                    in a dense per-region table.  Nothing but ciphertext and
                    MACs lives off-chip.
``BaselineMemory``  MEE-style: per-64-B-line VNs stored off-chip in an
                    ``arity``-ary counter tree whose root stays on-chip,
                    per-line MACs, and an LRU metadata cache.

All engines work on 512-B chunks and return a :class:`TxLog` of 64-B DRAM
transactions.  With ``functional=False`` no bytes are stored or encrypted;
transaction logs, counter bookkeeping and the keystream audit are unchanged,
since none of them depend on data values.
"""
from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .. import crypto
from ..crypto import KeyRole, SymmetricKey
from ..workload import CHUNK_BYTES, TensorRegion
from .audit import KeystreamAudit
from .cache import MetadataCache
from .trace import TX_BYTES, Purpose, TxLog

LINE = TX_BYTES
LINES_PER_CHUNK = CHUNK_BYTES // LINE
BLOCKS_PER_CHUNK = CHUNK_BYTES // 16
KEYSTREAM_LATENCY = 12
BASELINE_VN_BITS = 56


class AlignmentError(ValueError):
    pass


def _align(n: int, a: int) -> int:
    return -(-n // a) * a


@dataclass(frozen=True)
class ProtectionParams:
    mac_width: int = 8                 # GuardNN tag bytes per 512-B chunk
    cache_capacity: int = 32 * 1024    # baseline metadata cache
    tree_arity: int = 8
    keystream_latency: int = KEYSTREAM_LATENCY
    memory_parallelism: int = 8        # outstanding misses that overlap a VN-miss stall


class ProtectedMemory:
    """Common surface of the engines; ``data`` holds what DRAM stores."""

    scheme = "abstract"
    integrity = False

    def __init__(self, size: int, regions: list[TensorRegion] | None = None,
                 functional: bool = True, params: ProtectionParams | None = None,
                 audit: KeystreamAudit | None = None):
        self.size = _align(max(size, CHUNK_BYTES), CHUNK_BYTES)
        self.regions = sorted(regions or [], key=lambda r: r.base_addr)
        self.functional = functional
        self.params = params or ProtectionParams()
        self.audit = audit if audit is not None else KeystreamAudit()
        self.data = np.zeros(self.size if functional else 0, dtype=np.uint8)
        self.mem_key: SymmetricKey | None = None
        self.mac_key: SymmetricKey | None = None

    # -- keys -----------------------------------------------------------------
    def set_keys(self, mem_key: SymmetricKey | None, mac_key: SymmetricKey | None,
                 integrity: bool = False) -> None:
        if mem_key is not None and mem_key.role is not KeyRole.MEM_ENC:
            raise ValueError("memory key has the wrong role")
        if mac_key is not None and mac_key.role is not KeyRole.MAC:
            raise ValueError("MAC key has the wrong role")
        self.mem_key, self.mac_key = mem_key, mac_key

    def _check(self, addr: int, n_chunks: int) -> None:
        if addr % CHUNK_BYTES:
            raise AlignmentError(f"address {addr:#x} is not chunk aligned")
        if n_chunks < 1 or addr < 0 or addr + n_chunks * CHUNK_BYTES > self.size:
            raise AlignmentError(f"access [{addr:#x}, +{n_chunks} chunks) outside memory")

    # -- interface ------------------------------------------------------------
    def write_range(self, addr: int, n_chunks: int, plaintext: bytes | None, vn: int) -> TxLog:
        raise NotImplementedError

    def read_range(self, addr: int, n_chunks: int, vn) -> tuple[bytes | None, bool, TxLog]:
        raise NotImplementedError

    def write_chunk(self, addr: int, plaintext: bytes | None, vn: int) -> TxLog:
        return self.write_range(addr, 1, plaintext, vn)

    def read_chunk(self, addr: int, vn: int) -> tuple[bytes | None, bool, TxLog]:
        return self.read_range(addr, 1, vn)

    def would_reuse(self, addr: int, n_chunks: int, vn: int) -> bool:
        return False

    def flush(self, invalidate: bool = True) -> TxLog:
        return TxLog()

    def dram_images(self) -> list[bytes]:
        """Every byte an observer of DRAM can see."""
        return [self.data.tobytes()] if self.functional else []


class PlainMemory(ProtectedMemory):
    scheme = "NP"

    def write_range(self, addr, n_chunks, plaintext, vn=0):
        self._check(addr, n_chunks)
        log = TxLog()
        if self.functional:
            nbytes = n_chunks * CHUNK_BYTES
            self.data[addr : addr + nbytes] = np.frombuffer(_pad(plaintext, nbytes), dtype=np.uint8)
        log.add(Purpose.DATA, addr, n_chunks * LINES_PER_CHUNK, write=True)
        return log

    def read_range(self, addr, n_chunks, vn=0):
        self._check(addr, n_chunks)
        log = TxLog()
        log.add(Purpose.DATA, addr, n_chunks * LINES_PER_CHUNK)
        pt = self.data[addr : addr + n_chunks * CHUNK_BYTES].tobytes() if self.functional else None
        return pt, True, log


def _pad(data: bytes | None, n: int) -> bytes:
    data = b"" if data is None else bytes(data)
    if len(data) > n:
        raise ValueError("payload larger than the target range")
    return data + bytes(n - len(data))


class GuardNNMemory(ProtectedMemory):
    """Tree-less protection: VNs come from the caller, never from DRAM."""

    scheme = "GuardNN"

    def __init__(self, size, regions=None, functional=True, params=None, audit=None):
        super().__init__(size, regions, functional, params, audit)
        w = self.params.mac_width
        if not 1 <= w <= 64:
            raise ValueError("MAC width must be 1..64 bytes")
        # one line-aligned MAC table per region
        spans = [(r.base_addr, r.n_chunks) for r in self.regions] or [(0, self.size // CHUNK_BYTES)]
        self._bases = [b for b, _ in spans]
        self._mac_off = []
        off = 0
        for _, n in spans:
            self._mac_off.append(off)
            off += _align(n * w, LINE)
        self.mac_base = _align(self.size, 4096)
        self.macs = np.zeros(off if functional else 0, dtype=np.uint8)
        self.integrity = False
        # one-line MAC buffers for single-chunk access streams
        self._wbuf: int | None = None
        self._rbuf: tuple[int, bytes] | None = None

    def set_keys(self, mem_key, mac_key, integrity=False):
        super().set_keys(mem_key, mac_key, integrity)
        self.integrity = integrity
        self._wbuf = None
        self._rbuf = None

    def mac_offset(self, addr: int) -> int:
        i = bisect_right(self._bases, addr) - 1
        if i < 0:
            raise AlignmentError(f"{addr:#x} lies in no region")
        return self._mac_off[i] + (addr - self._bases[i]) // CHUNK_BYTES * self.params.mac_width

    def mac_addr(self, addr: int) -> int:
        return self.mac_base + self.mac_offset(addr)

    def _mac_lines(self, addr: int, n_chunks: int) -> tuple[int, int]:
        first = self.mac_offset(addr) // LINE
        last = (self.mac_offset(addr + (n_chunks - 1) * CHUNK_BYTES) + self.params.mac_width - 1) // LINE
        return first, last

    def _key_fp(self) -> str:
        if self.mem_key is None:
            raise RuntimeError("no memory key installed")
        return self.mem_key.fingerprint

    def would_reuse(self, addr, n_chunks, vn):
        return self.audit.conflicts(self._key_fp(), vn, addr, addr + n_chunks * CHUNK_BYTES)

    def _keystream(self, addr: int, n_chunks: int, vns) -> np.ndarray:
        n_blocks = n_chunks * BLOCKS_PER_CHUNK
        addrs = addr + 16 * np.arange(n_blocks, dtype=np.uint64)
        if np.ndim(vns) == 0:
            v = np.full(n_blocks, int(vns), dtype=np.uint64)
        else:
            v = np.repeat(np.asarray(vns, dtype=np.uint64), BLOCKS_PER_CHUNK)
        return crypto.keystream_blocks(self.mem_key, addrs, v).reshape(-1)

    def _tag(self, ct: bytes, addr: int, vn: int) -> bytes:
        payload = ct + addr.to_bytes(8, "big") + int(vn).to_bytes(8, "big")
        return crypto.mac(self.mac_key, payload, self.params.mac_width)

    def _flush_buffers(self, log: TxLog) -> None:
        if self._wbuf is not None:
            log.add(Purpose.MAC, self.mac_base + self._wbuf * LINE, 1, write=True)
            self._wbuf = None
        self._rbuf = None

    def flush(self, invalidate=True):
        log = TxLog()
        self._flush_buffers(log)
        return log

    def _store(self, addr, n_chunks, plaintext, vn):
        fp = self._key_fp()
        nbytes = n_chunks * CHUNK_BYTES
        self.audit.claim(fp, vn, addr, addr + nbytes)
        if not self.functional:
            return
        pt = np.frombuffer(_pad(plaintext, nbytes), dtype=np.uint8)
        ct = pt ^ self._keystream(addr, n_chunks, vn)
        self.data[addr : addr + nbytes] = ct
        if self.integrity:
            w = self.params.mac_width
            for c in range(n_chunks):
                a = addr + c * CHUNK_BYTES
                off = self.mac_offset(a)
                tag = self._tag(ct[c * CHUNK_BYTES : (c + 1) * CHUNK_BYTES].tobytes(), a, vn)
                self.macs[off : off + w] = np.frombuffer(tag, dtype=np.uint8)

    def write_range(self, addr, n_chunks, plaintext, vn):
        self._check(addr, n_chunks)
        log = TxLog()
        self._flush_buffers(log)
        self._store(addr, n_chunks, plaintext, vn)
        log.add(Purpose.DATA, addr, n_chunks * LINES_PER_CHUNK, write=True)
        if self.integrity:
            first, last = self._mac_lines(addr, n_chunks)
            log.add(Purpose.MAC, self.mac_base + first * LINE, last - first + 1, write=True)
        log.stall_cycles += self.params.keystream_latency
        return log

    def write_chunk(self, addr, plaintext, vn):
        """Single-chunk write; MAC-line writes are combined across calls until :meth:`flush`."""
        self._check(addr, 1)
        log = TxLog()
        self._rbuf = None
        self._store(addr, 1, plaintext, vn)
        log.add(Purpose.DATA, addr, LINES_PER_CHUNK, write=True)
        if self.integrity:
            line = self.mac_offset(addr) // LINE
            if self._wbuf is not None and self._wbuf != line:
                log.add(Purpose.MAC, self.mac_base + self._wbuf * LINE, 1, write=True)
            self._wbuf = line
        log.stall_cycles += self.params.keystream_latency
        return log

    def _verify(self, ct: np.ndarray, addr: int, n_chunks: int, vns, tags: np.ndarray) -> bool:
        ok = True
        w = self.params.mac_width
        for c in range(n_chunks):
            v = vns if np.ndim(vns) == 0 else vns[c]
            a = addr + c * CHUNK_BYTES
            off = self.mac_offset(a) - self.mac_offset(addr)
            expect = self._tag(ct[c * CHUNK_BYTES : (c + 1) * CHUNK_BYTES].tobytes(), a, v)
            if tags[off : off + w].tobytes() != expect:
                ok = False
        return ok

    def read_range(self, addr, n_chunks, vn):
        self._check(addr, n_chunks)
        log = TxLog()
        self._flush_buffers(log)
        log.add(Purpose.DATA, addr, n_chunks * LINES_PER_CHUNK)
        if self.integrity:
            first, last = self._mac_lines(addr, n_chunks)
            log.add(Purpose.MAC, self.mac_base + first * LINE, last - first + 1)
        log.stall_cycles += self.params.keystream_latency
        if not self.functional:
            return None, True, log
        nbytes = n_chunks * CHUNK_BYTES
        ct = self.data[addr : addr + nbytes]
        pt = (ct ^ self._keystream(addr, n_chunks, vn)).tobytes()
        if self.integrity:
            off = self.mac_offset(addr)
            span = self.mac_offset(addr + (n_chunks - 1) * CHUNK_BYTES) + self.params.mac_width - off
            log.verified = self._verify(ct, addr, n_chunks, vn, self.macs[off : off + span])
        return pt, log.verified, log

    def read_chunk(self, addr, vn):
        """Single-chunk read through a one-line MAC buffer."""
        self._check(addr, 1)
        log = TxLog()
        if self._wbuf is not None:
            log.add(Purpose.MAC, self.mac_base + self._wbuf * LINE, 1, write=True)
            self._wbuf = None
        log.add(Purpose.DATA, addr, LINES_PER_CHUNK)
        log.stall_cycles += self.params.keystream_latency
        line_bytes = None
        if self.integrity:
            off = self.mac_offset(addr)
            line = off // LINE
            if self._rbuf is None or self._rbuf[0] != line:
                log.add(Purpose.MAC, self.mac_base + line * LINE, 1)
                raw = self.macs[line * LINE : (line + 1) * LINE].tobytes() if self.functional else b""
                self._rbuf = (line, raw)
            line_bytes = self._rbuf[1]
        if not self.functional:
            return None, True, log
        ct = self.data[addr : addr + CHUNK_BYTES]
        pt = (ct ^ self._keystream(addr, 1, vn)).tobytes()
        if self.integrity:
            o = self.mac_offset(addr) % LINE
            tags = np.frombuffer(line_bytes[o : o + self.params.mac_width], dtype=np.uint8)
            log.verified = self._verify(ct, addr, 1, vn, tags)
        return pt, log.verified, log

    def dram_images(self):
        return [self.data.tobytes(), self.macs.tobytes()] if self.functional else []


class BaselineMemory(ProtectedMemory):
    """MEE-style engine with stored VNs, per-line MACs and a counter tree.

    Level 0 of the tree holds the per-line VNs (``arity`` 56-bit counters per
    64-B line plus an 8-B node MAC); each higher level holds one counter per
    child node.  The root's counters never leave the chip.  Parent counters
    count child updates, and a node whose parent counter is still zero must be
    all-zero (never written), so DRAM needs no initialisation.
    """

    scheme = "BP"
    integrity = True

    def __init__(self, size, regions=None, functional=True, params=None, audit=None):
        super().__init__(size, regions, functional, params, audit)
        a = self.params.tree_arity
        if a < 2:
            raise ValueError("tree arity must be at least 2")
        self.n_lines = self.size // LINE
        counts = [-(-self.n_lines // a)]
        while counts[-1] > a:
            counts.append(-(-counts[-1] // a))
        self.level_counts = counts
        self.levels = len(counts)
        self.cache = MetadataCache(self.params.cache_capacity, LINE)
        if self.cache.n_lines < 2 * (self.levels + 2):
            raise ValueError("metadata cache too small for the tree depth")
        # DRAM layout of the metadata
        self.mac_base = _align(self.size, 4096)
        base = self.mac_base + _align(self.n_lines * 8, 4096)
        self.level_base = []
        for n in counts:
            self.level_base.append(base)
            base += _align(n * LINE, 4096)
        self.counters = [np.zeros((n, a), dtype=np.uint64) for n in counts]
        self.node_macs = [np.zeros((n, 8), dtype=np.uint8) for n in counts]
        self.line_macs = np.zeros((self.n_lines if functional else 0, 8), dtype=np.uint8)
        self.root = [0] * a
        self.key_fp = ""
        # set once any metadata fails verification; a halted engine stops
        # encrypting so rolled-back counters can never reuse a keystream
        self.halted = False

    def set_keys(self, mem_key, mac_key, integrity=True):
        super().set_keys(mem_key, mac_key, True)
        self.key_fp = mem_key.fingerprint if mem_key else ""
        # a new key starts a fresh tree
        self.cache.drain()
        for arr in self.counters + self.node_macs:
            arr[:] = 0
        self.line_macs[:] = 0
        self.root = [0] * self.params.tree_arity
        self.halted = False

    # -- metadata access ------------------------------------------------------
    def _node_addr(self, level: int, idx: int) -> int:
        return self.level_base[level] + idx * LINE

    def _purpose(self, level: int) -> Purpose:
        return Purpose.VN if level == 0 else Purpose.TREE

    def _node_tag(self, level: int, idx: int, counters: list[int], parent: int) -> bytes:
        payload = struct.pack(f">BQ{len(counters)}QQ", level, idx, *counters, parent)
        return crypto.mac(self.mac_key, payload, 8)

    def _evict(self, victim, log: TxLog) -> None:
        if victim is None:
            return
        key, (value, dirty) = victim
        if not dirty:
            return
        if key[0] == "mac":
            log.add(Purpose.MAC, self.mac_base + key[1] * LINE, 1, write=True)
            if self.functional:
                self.line_macs[key[1] * 8 : key[1] * 8 + 8] = value.reshape(8, 8)
        else:
            level, idx = key
            log.add(self._purpose(level), self._node_addr(level, idx), 1, write=True)
            counters, tag = value
            self.counters[level][idx] = counters
            if self.functional:
                self.node_macs[level][idx] = np.frombuffer(tag, dtype=np.uint8)

    def _parent_counter(self, level: int, idx: int, log: TxLog) -> int:
        a = self.params.tree_arity
        if level + 1 == self.levels:
            return self.root[idx]
        parent = self._node(level + 1, idx // a, log)
        return parent[0][0][idx % a]

    def _node(self, level: int, idx: int, log: TxLog) -> list:
        """Cache entry ``[(counters, tag), dirty]`` for a node, fetching and verifying on a miss."""
        key = (level, idx)
        cache = self.cache
        entry = cache.lines.get(key)
        if entry is not None:
            cache.hits += 1
            cache.lines.move_to_end(key)
            return entry
        cache.misses += 1
        log.add(Purpose.VN if level == 0 else Purpose.TREE, self.level_base[level] + idx * LINE, 1)
        if level == 0:
            log.stall_cycles += self.params.keystream_latency / self.params.memory_parallelism
        counters = self.counters[level][idx].tolist()
        tag = self.node_macs[level][idx].tobytes() if self.functional else b""
        parent = self._parent_counter(level, idx, log)
        if self.functional:
            if parent == 0:
                ok = not any(counters) and not any(tag)
            else:
                ok = self._node_tag(level, idx, counters, parent) == tag
            if not ok:
                log.verified = False
                self.halted = True
        entry, victim = cache.insert(key, (counters, tag))
        if victim is not None:
            self._evict(victim, log)
        return entry

    def _mac_line(self, idx: int, full_write: bool, log: TxLog) -> list:
        key = ("mac", idx)
        entry = self.cache.lookup(key)
        if entry is not None:
            return entry
        if full_write:
            value = np.zeros(8 * 8, dtype=np.uint8) if self.functional else None
        else:
            log.add(Purpose.MAC, self.mac_base + idx * LINE, 1)
            value = self.line_macs[idx * 8 : idx * 8 + 8].reshape(-1).copy() if self.functional else None
        entry, victim = self.cache.insert(key, value)
        self._evict(victim, log)
        return entry

    def tree_update(self, level: int, idx: int, log: TxLog) -> None:
        """Propagate an update of node (level, idx) to the on-chip root."""
        a = self.params.tree_arity
        top = self.levels - 1
        entry = self._node(level, idx, log)
        while True:
            entry[1] = True
            if level == top:
                self.root[idx] += 1
                pc, parent = self.root[idx], None
            else:
                parent = self._node(level + 1, idx // a, log)
                slots = parent[0][0]
                slots[idx % a] += 1
                pc = slots[idx % a]
            if self.functional:
                counters = entry[0][0]
                entry[0] = (counters, self._node_tag(level, idx, counters, pc))
            if parent is None:
                return
            entry, level, idx = parent, level + 1, idx // a

    def tree_verify(self, level: int, idx: int, log: TxLog) -> bool:
        """Verify node (level, idx) up to the first cached ancestor or the root."""
        before = log.verified
        log.verified = True
        self._node(level, idx, log)
        ok = log.verified
        log.verified = before and ok
        return ok

    # -- data path ------------------------------------------------------------
    def _line_tag(self, ct: bytes, line: int, vn: int) -> bytes:
        payload = ct + (line * LINE).to_bytes(8, "big") + vn.to_bytes(8, "big")
        return crypto.mac(self.mac_key, payload, 8)

    def _groups(self, first_line: int, n_lines: int):
        a = self.params.tree_arity
        line, end = first_line, first_line + n_lines
        while line < end:
            stop = min(end, (line // a + 1) * a)
            yield line // a, line, stop
            line = stop

    def write_lines(self, first_line: int, n_lines: int, plaintext: bytes | None, log: TxLog) -> None:
        a = self.params.tree_arity
        ct_all = None
        if self.functional and not self.halted:
            pt = np.frombuffer(_pad(plaintext, n_lines * LINE), dtype=np.uint8)
            vns = (self._current_vns(first_line, n_lines) + 1) & ((1 << BASELINE_VN_BITS) - 1)
            ct_all = pt ^ self._line_keystream(first_line, vns)
        log.add(Purpose.DATA, first_line * LINE, n_lines, write=True)
        for node_idx, lo, hi in self._groups(first_line, n_lines):
            entry = self._node(0, node_idx, log)
            counters = entry[0][0]
            new_vns = []
            for line in range(lo, hi):
                v = counters[line % a] + 1
                if v >= 1 << BASELINE_VN_BITS:
                    if not self.halted:
                        raise OverflowError("baseline VN overflow")
                    v &= (1 << BASELINE_VN_BITS) - 1
                counters[line % a] = v
                new_vns.append(v)
            if not self.halted:
                self._claim(lo, new_vns)
            for mline in range(lo // 8, (hi - 1) // 8 + 1):
                full = mline * 8 >= first_line and mline * 8 + 8 <= first_line + n_lines
                mentry = self._mac_line(mline, full, log)
                mentry[1] = True
            if self.functional and not self.halted:
                off = (lo - first_line) * LINE
                ct = ct_all[off : off + (hi - lo) * LINE]
                self.data[lo * LINE : hi * LINE] = ct
                for k, line in enumerate(range(lo, hi)):
                    tag = self._line_tag(ct[k * LINE : (k + 1) * LINE].tobytes(), line, new_vns[k])
                    mentry = self.cache.lines[("mac", line // 8)]
                    o = (line % 8) * 8
                    mentry[0][o : o + 8] = np.frombuffer(tag, dtype=np.uint8)
            self.tree_update(0, node_idx, log)

    def _current_vns(self, first_line: int, n_lines: int) -> np.ndarray:
        """VNs of a line range as the engine currently sees them, without traffic."""
        a = self.params.tree_arity
        lo_node, hi_node = first_line // a, (first_line + n_lines - 1) // a + 1
        block = self.counters[0][lo_node:hi_node].copy()
        lines = self.cache.lines
        for idx in range(lo_node, hi_node):
            entry = lines.get((0, idx))
            if entry is not None:
                block[idx - lo_node] = entry[0][0]
        skip = first_line - lo_node * a
        return block.reshape(-1)[skip : skip + n_lines]

    def _line_keystream(self, first_line: int, vns: np.ndarray) -> np.ndarray:
        addrs = first_line * LINE + 16 * np.arange(len(vns) * 4, dtype=np.uint64)
        return crypto.keystream_blocks(self.mem_key, addrs, np.repeat(vns.astype(np.uint64), 4)).reshape(-1)

    def _claim(self, lo: int, vns: list[int]) -> None:
        start = 0
        for k in range(1, len(vns) + 1):
            if k == len(vns) or vns[k] != vns[start]:
                self.audit.claim(self.key_fp, vns[start], (lo + start) * LINE, (lo + k) * LINE)
                start = k

    def read_lines(self, first_line: int, n_lines: int, log: TxLog) -> bytes | None:
        a = self.params.tree_arity
        log.add(Purpose.DATA, first_line * LINE, n_lines)
        out = bytearray() if self.functional else None
        if self.functional:
            ks_all = self._line_keystream(first_line, self._current_vns(first_line, n_lines))
        for node_idx, lo, hi in self._groups(first_line, n_lines):
            entry = self._node(0, node_idx, log)
            counters = entry[0][0]
            vns = [counters[line % a] for line in range(lo, hi)]
            for mline in range(lo // 8, (hi - 1) // 8 + 1):
                self._mac_line(mline, False, log)
            if not self.functional:
                continue
            ct = self.data[lo * LINE : hi * LINE]
            off = (lo - first_line) * LINE
            pt = ct ^ ks_all[off : off + (hi - lo) * LINE]
            for k, line in enumerate(range(lo, hi)):
                if vns[k] == 0:
                    # never written in this session: reads as zeros
                    pt[k * LINE : (k + 1) * LINE] = 0
                    continue
                mentry = self.cache.lines[("mac", line // 8)]
                o = (line % 8) * 8
                expect = self._line_tag(ct[k * LINE : (k + 1) * LINE].tobytes(), line, vns[k])
                if mentry[0][o : o + 8].tobytes() != expect:
                    log.verified = False
            out += pt.tobytes()
        return bytes(out) if out is not None else None

    def write_range(self, addr, n_chunks, plaintext, vn=None):
        self._check(addr, n_chunks)
        log = TxLog()
        log.stall_cycles += self.params.keystream_latency
        self.write_lines(addr // LINE, n_chunks * LINES_PER_CHUNK, plaintext, log)
        return log

    def read_range(self, addr, n_chunks, vn=None):
        self._check(addr, n_chunks)
        log = TxLog()
        log.stall_cycles += self.params.keystream_latency
        pt = self.read_lines(addr // LINE, n_chunks * LINES_PER_CHUNK, log)
        return pt, log.verified, log

    def line_vn(self, line: int) -> int:
        """Current VN of a data line as the engine sees it (cache first)."""
        a = self.params.tree_arity
        entry = self.cache.lines.get((0, line // a))
        if entry is not None:
            return entry[0][0][line % a]
        return int(self.counters[0][line // a][line % a])

    def flush(self, invalidate=True):
        log = TxLog()
        if invalidate:
            for item in self.cache.drain():
                self._evict(item, log)
        else:
            for key, entry in self.cache.lines.items():
                if entry[1]:
                    self._evict((key, entry), log)
                    entry[1] = False
        return log

    def dram_images(self):
        if not self.functional:
            return []
        imgs = [self.data.tobytes(), self.line_macs.tobytes()]
        imgs += [c.tobytes() for c in self.counters] + [m.tobytes() for m in self.node_macs]
        return imgs
