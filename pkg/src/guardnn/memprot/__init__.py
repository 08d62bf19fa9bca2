"""Off-chip memory protection engines and their supporting state."""
from .audit import KeystreamAudit, KeystreamReuseError
from .cache import MetadataCache
from .engines import (AlignmentError, BaselineMemory, GuardNNMemory, PlainMemory,
                      ProtectedMemory, ProtectionParams)
from .trace import TX_BYTES, Purpose, Transaction, TxLog
from .vn import (CounterSnapshot, CounterValue, ProtocolError, SessionExhausted,
                 VersionNumber, VnTag, vn_for_read, vn_for_write)


def write_chunk(mem: ProtectedMemory, addr: int, plaintext: bytes, vn: int) -> TxLog:
    return mem.write_chunk(addr, plaintext, vn)


def read_chunk(mem: ProtectedMemory, addr: int, vn: int):
    return mem.read_chunk(addr, vn)


def tree_update(mem: BaselineMemory, line_addr: int) -> TxLog:
    log = TxLog()
    mem.tree_update(0, line_addr // TX_BYTES // mem.params.tree_arity, log)
    return log


def tree_verify(mem: BaselineMemory, line_addr: int) -> tuple[bool, TxLog]:
    log = TxLog()
    ok = mem.tree_verify(0, line_addr // TX_BYTES // mem.params.tree_arity, log)
    return ok, log


__all__ = [
    "AlignmentError", "BaselineMemory", "CounterSnapshot", "CounterValue", "GuardNNMemory",
    "KeystreamAudit", "KeystreamReuseError", "MetadataCache", "PlainMemory", "ProtectedMemory",
    "ProtectionParams", "ProtocolError", "Purpose", "SessionExhausted", "TX_BYTES", "Transaction",
    "TxLog", "VersionNumber", "VnTag", "read_chunk", "tree_update", "tree_verify", "vn_for_read",
    "vn_for_write", "write_chunk",
]
