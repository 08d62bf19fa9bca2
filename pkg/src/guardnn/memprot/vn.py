"""Version numbers derived from on-chip counters.

A 64-bit VN is ``tag (2 bits) | primary (30 bits) | epoch (32 bits)``.  The tag
keeps feature, weight and input VNs disjoint under one memory key.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from ..workload import RegionKind, TensorRegion

PRIMARY_BITS = 30
EPOCH_BITS = 32
PRIMARY_MAX = (1 << PRIMARY_BITS) - 1
EPOCH_MAX = (1 << EPOCH_BITS) - 1


class SessionExhausted(Exception):
    """A counter would wrap; the session has to be re-keyed."""


class ProtocolError(Exception):
    """The host did not supply the read counter a feature read needs."""


class VnTag(IntEnum):
    FEATURE = 0
    WEIGHT = 1
    INPUT = 2


@dataclass(frozen=True)
class VersionNumber:
    tag: VnTag
    primary: int
    epoch: int

    def __post_init__(self):
        if not 0 <= self.primary <= PRIMARY_MAX:
            raise SessionExhausted(f"primary counter {self.primary} out of range")
        if not 0 <= self.epoch <= EPOCH_MAX:
            raise SessionExhausted(f"epoch counter {self.epoch} out of range")

    @property
    def value(self) -> int:
        return (int(self.tag) << 62) | (self.primary << 32) | self.epoch

    @classmethod
    def from_value(cls, value: int) -> "VersionNumber":
        return cls(VnTag(value >> 62), (value >> 32) & PRIMARY_MAX, value & EPOCH_MAX)


@dataclass(frozen=True)
class CounterValue:
    """The 128-bit block-cipher input for one 16-byte block."""
    block_addr: int
    vn: int

    def to_bytes(self) -> bytes:
        return self.block_addr.to_bytes(8, "big") + self.vn.to_bytes(8, "big")


@dataclass(frozen=True)
class CounterSnapshot:
    ctr_in: int = 0
    ctr_fw: int = 0
    ctr_w: int = 0


def vn_for_write(state: CounterSnapshot, region: TensorRegion,
                 feature_epoch: int | None = None) -> VersionNumber:
    """VN used to encrypt a write of ``region``.

    Gradients reuse the VN of their paired feature: pass that feature's write
    epoch as ``feature_epoch`` (``None`` when the pair is the network input).
    """
    kind = region.kind
    if kind is RegionKind.FEATURE:
        return VersionNumber(VnTag.FEATURE, state.ctr_in, state.ctr_fw)
    if kind is RegionKind.GRADIENT:
        if feature_epoch is None:
            return VersionNumber(VnTag.INPUT, state.ctr_in, 0)
        return VersionNumber(VnTag.FEATURE, state.ctr_in, feature_epoch)
    if kind is RegionKind.WEIGHT:
        return VersionNumber(VnTag.WEIGHT, 0, state.ctr_w)
    return VersionNumber(VnTag.INPUT, state.ctr_in, 0)


def vn_for_read(read_ctr: int | None, region: TensorRegion, state: CounterSnapshot,
                paired_is_input: bool = False) -> VersionNumber:
    """VN used to decrypt a read of ``region``.

    Features and gradients take their epoch from the host-supplied read
    counter; weights and inputs ignore it.
    """
    kind = region.kind
    if kind is RegionKind.WEIGHT:
        return VersionNumber(VnTag.WEIGHT, 0, state.ctr_w)
    if kind is RegionKind.INPUT or (kind is RegionKind.GRADIENT and paired_is_input):
        return VersionNumber(VnTag.INPUT, state.ctr_in, 0)
    if read_ctr is None:
        raise ProtocolError(f"no read counter set for {region.id}")
    return VersionNumber(VnTag.FEATURE, state.ctr_in, read_ctr)
