"""The accelerator's instruction set and state machine.

The host is untrusted: every operand is attacker-chosen, and any instruction
may arrive in any state.  Invalid instructions get an explicit rejection and
leave the state untouched.  Responses only ever carry public values,
session-key ciphertext or signatures.

Operand notes:

* ``SetWeight`` imports every listed weight region in one message; the
  session plaintext is the concatenation of the regions' bytes.
* ``Forward`` has a ``phase`` operand.  ``"backward"`` runs the backward
  step of the layer (gradient read, feature read, weight read, gradient
  write, weight update).  ``regions`` optionally overrides the operand
  regions slot by slot; sizes must match the layer's shapes.
* Weight updates are written under ``CTR_W + 1`` and become current when the
  backward step of layer 1 completes.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import MISSING, dataclass, field, fields
from enum import Enum
from typing import ClassVar

import numpy as np

from . import crypto, kernels
from .crypto import Digest, DigestTag, KeyRole, Rng, SymmetricKey
from .memprot import (BaselineMemory, GuardNNMemory, KeystreamAudit, PlainMemory,
                      ProtectedMemory, ProtectionParams, TxLog)
from .memprot.vn import EPOCH_MAX, PRIMARY_MAX, VersionNumber, VnTag
from .workload import CHUNK_BYTES, Dfg, Layer, RegionKind, StepKind, TensorRegion, compute_groups, tensor_bytes


class Opcode(str, Enum):
    GET_PK = "GetPK"
    INIT_SESSION = "InitSession"
    SET_WEIGHT = "SetWeight"
    SET_INPUT = "SetInput"
    FORWARD = "Forward"
    SET_READ_CTR = "SetReadCTR"
    EXPORT_OUTPUT = "ExportOutput"
    SIGN_OUTPUT = "SignOutput"


class DeviceMode(str, Enum):
    IDLE = "Idle"
    CONFIDENTIALITY = "ConfidentialityOnly"
    CONFIDENTIALITY_INTEGRITY = "ConfidentialityIntegrity"


# -- instructions --------------------------------------------------------------

_BYTES_FIELDS = {"user_public", "ciphertext"}


@dataclass(frozen=True)
class Instruction:
    opcode: ClassVar[Opcode]

    def operands(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def log_bytes(self) -> bytes:
        """Opcode and operands as absorbed into the instruction log (no bulk ciphertext)."""
        ops = {k: _jsonable(v) for k, v in self.operands().items() if k != "ciphertext"}
        return self.opcode.value.encode() + b":" + json.dumps(ops, sort_keys=True).encode()

    def to_record(self) -> dict:
        return {"op": self.opcode.value, **{k: _jsonable(v) for k, v in self.operands().items()}}


def _jsonable(v):
    if isinstance(v, (bytes, bytearray)):
        return v.hex()
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


@dataclass(frozen=True)
class GetPK(Instruction):
    opcode: ClassVar[Opcode] = Opcode.GET_PK


@dataclass(frozen=True)
class InitSession(Instruction):
    user_public: bytes
    want_integrity: bool = True
    opcode: ClassVar[Opcode] = Opcode.INIT_SESSION


@dataclass(frozen=True)
class SetWeight(Instruction):
    ciphertext: bytes | None
    regions: tuple[str, ...]
    opcode: ClassVar[Opcode] = Opcode.SET_WEIGHT


@dataclass(frozen=True)
class SetInput(Instruction):
    ciphertext: bytes | None
    region: str
    opcode: ClassVar[Opcode] = Opcode.SET_INPUT


@dataclass(frozen=True)
class Forward(Instruction):
    layer_index: int
    phase: str = "forward"
    regions: tuple[str, ...] | None = None
    opcode: ClassVar[Opcode] = Opcode.FORWARD


@dataclass(frozen=True)
class SetReadCTR(Instruction):
    addr_range: tuple[int, int]
    value: int
    opcode: ClassVar[Opcode] = Opcode.SET_READ_CTR


@dataclass(frozen=True)
class ExportOutput(Instruction):
    region: str
    opcode: ClassVar[Opcode] = Opcode.EXPORT_OUTPUT


@dataclass(frozen=True)
class SignOutput(Instruction):
    opcode: ClassVar[Opcode] = Opcode.SIGN_OUTPUT


_BY_OPCODE = {c.opcode: c for c in (GetPK, InitSession, SetWeight, SetInput, Forward,
                                      SetReadCTR, ExportOutput, SignOutput)}


class MalformedRecord(ValueError):
    pass


def instruction_from_record(rec: dict) -> Instruction:
    """Inverse of :meth:`Instruction.to_record`; raises MalformedRecord."""
    try:
        cls = _BY_OPCODE[Opcode(rec["op"])]
        names = {f.name for f in fields(cls)}
        extra = set(rec) - names - {"op"}
        if extra:
            raise MalformedRecord(f"unexpected fields {sorted(extra)}")
        kwargs = {}
        for f in fields(cls):
            if f.name not in rec:
                if f.default is MISSING:
                    raise MalformedRecord(f"missing field {f.name!r}")
                continue
            v = rec[f.name]
            if f.name in _BYTES_FIELDS and v is not None:
                v = bytes.fromhex(v)
            elif isinstance(v, list):
                v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
            kwargs[f.name] = v
        return cls(**kwargs)
    except MalformedRecord:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise MalformedRecord(f"bad instruction record: {exc!r}") from None


@dataclass
class Response:
    opcode: Opcode
    ok: bool
    payload: bytes = b""
    error: str | None = None
    log: TxLog = field(default_factory=TxLog)

    def to_record(self) -> dict:
        return {"op": self.opcode.value, "ok": self.ok, "payload": self.payload.hex(),
                "error": self.error, "tx": self.log.total}


class Rejected(Exception):
    pass


# -- read-counter map ----------------------------------------------------------

class ReadCtrMap:
    """Address ranges to CTR_F,R values; later settings win on overlap."""

    def __init__(self):
        self.spans: list[tuple[int, int, int]] = []    # sorted, disjoint

    def set(self, start: int, end: int, value: int) -> None:
        kept = []
        for s, e, v in self.spans:
            if e <= start or s >= end:
                kept.append((s, e, v))
                continue
            if s < start:
                kept.append((s, start, v))
            if e > end:
                kept.append((end, e, v))
        kept.append((start, end, value))
        kept.sort()
        self.spans = kept

    def lookup(self, start: int, n_chunks: int) -> list[int] | None:
        """Per-chunk values for a range, or None if any chunk is uncovered."""
        out = []
        for c in range(n_chunks):
            a = start + c * CHUNK_BYTES
            v = next((v for s, e, v in self.spans if s <= a < e), None)
            if v is None:
                return None
            out.append(v)
        return out

    def clear(self) -> None:
        self.spans = []


# -- state ---------------------------------------------------------------------

@dataclass
class AcceleratorState:
    identity: crypto.DeviceIdentity
    session_key: SymmetricKey | None = None
    mem_key: SymmetricKey | None = None
    mac_key: SymmetricKey | None = None
    session_id: bytes = b""
    ctr_in: int = 0
    ctr_fw: int = 0
    ctr_w: int = 0
    read_ctr: ReadCtrMap = field(default_factory=ReadCtrMap)
    digests: dict = field(default_factory=dict)
    mode: DeviceMode = DeviceMode.IDLE
    failed: bool = False
    rx_seq: int = -1
    tx_seq: int = 0
    pending_weights: set = field(default_factory=set)

    @property
    def integrity(self) -> bool:
        return self.mode is DeviceMode.CONFIDENTIALITY_INTEGRITY

    def snapshot(self) -> dict:
        """Public view for tests and traces (no key material)."""
        return {"mode": self.mode.value, "ctr_in": self.ctr_in, "ctr_fw": self.ctr_fw,
                "ctr_w": self.ctr_w, "failed": self.failed, "read_ctr": list(self.read_ctr.spans)}


def _fresh_digests() -> dict:
    return {t: Digest(t) for t in DigestTag}


def attestation_message(session_id: bytes, digests: dict[DigestTag, bytes]) -> bytes:
    return b"attest" + session_id + b"".join(digests[t] for t in DigestTag)


def key_exchange_message(user_public: bytes, device_ephemeral: bytes) -> bytes:
    return b"kx" + user_public + device_ephemeral


ENGINES = {"plain": PlainMemory, "guardnn": GuardNNMemory, "baseline": BaselineMemory}


class Accelerator:
    """One simulated device: state machine plus its DRAM.

    ``engine`` selects the memory protection (plain | guardnn | baseline).
    With ``functional=False`` the device runs traffic-only: no payload is
    decrypted or computed, but every counter, rejection rule and DRAM
    transaction is the same as in a functional run.
    """

    def __init__(self, dfg: Dfg, engine: str = "guardnn", params: ProtectionParams | None = None,
                 seed: int = 0, functional: bool = True,
                 identity: crypto.DeviceIdentity | None = None, memory_size: int | None = None):
        if engine not in ENGINES:
            raise ValueError(f"unknown engine {engine!r}")
        self.dfg = dfg
        self.engine_name = engine
        self.functional = functional
        self.rng = Rng(seed)
        if identity is None:
            identity = crypto.DeviceIdentity.manufacture(self.rng.spawn(), crypto.manufacturer_root())
        self.state = AcceleratorState(identity)
        self.audit = KeystreamAudit()
        size = max(memory_size or 0, dfg.address_space, CHUNK_BYTES)
        self.memory: ProtectedMemory = ENGINES[engine](size, list(dfg.regions), functional,
                                                       params, self.audit)

    # -- dispatch ----------------------------------------------------------
    def execute(self, ins: Instruction) -> Response:
        handler = {
            Opcode.GET_PK: self._get_pk, Opcode.INIT_SESSION: self._init_session,
            Opcode.SET_WEIGHT: self._set_weight, Opcode.SET_INPUT: self._set_input,
            Opcode.FORWARD: self._forward, Opcode.SET_READ_CTR: self._set_read_ctr,
            Opcode.EXPORT_OUTPUT: self._export, Opcode.SIGN_OUTPUT: self._sign,
        }.get(getattr(ins, "opcode", None))
        if handler is None:
            return Response(Opcode.GET_PK, False, error="unknown instruction")
        log = TxLog()
        try:
            payload = handler(ins, log)
        except Rejected as exc:
            return Response(ins.opcode, False, error=str(exc))
        st = self.state
        if st.integrity and ins.opcode not in (Opcode.GET_PK, Opcode.SIGN_OUTPUT):
            st.digests[DigestTag.INSTR_LOG].absorb(ins.log_bytes())
        return Response(ins.opcode, True, payload, log=log)

    def run(self, program) -> list[Response]:
        return [self.execute(i) for i in program]

    # -- helpers -----------------------------------------------------------
    def _need_session(self) -> AcceleratorState:
        st = self.state
        if st.mode is DeviceMode.IDLE:
            raise Rejected("no active session")
        return st

    def _region(self, rid) -> TensorRegion:
        if not isinstance(rid, str) or not self.dfg.has_region(rid):
            raise Rejected(f"unknown region {rid!r}")
        return self.dfg.region(rid)

    def _open(self, ins: Instruction, ciphertext, expected_len: int) -> bytes | None:
        """Authenticate and decrypt an import; returns None in traffic-only mode."""
        st = self.state
        if not self.functional:
            return None
        if not isinstance(ciphertext, (bytes, bytearray)) or len(ciphertext) < 28:
            raise Rejected("malformed import")
        seq = int.from_bytes(ciphertext[4:12], "big")
        if seq <= st.rx_seq:
            raise Rejected("stale channel sequence number")
        try:
            pt = crypto.open_sealed(st.session_key, crypto.TO_DEVICE, ciphertext, ins.log_bytes())
        except crypto.TransportError as exc:
            raise Rejected(str(exc)) from None
        if len(pt) != expected_len:
            raise Rejected("import length does not match the target regions")
        st.rx_seq = seq
        return pt

    def _read_vns(self, region: TensorRegion):
        """VN(s) for reading a region: an int, or a per-chunk list."""
        st = self.state
        kind = region.kind
        if kind is RegionKind.WEIGHT:
            return VersionNumber(VnTag.WEIGHT, 0, st.ctr_w).value
        if kind is RegionKind.INPUT or (
                kind is RegionKind.GRADIENT
                and self.dfg.region(region.paired_feature).kind is RegionKind.INPUT):
            return VersionNumber(VnTag.INPUT, st.ctr_in, 0).value
        epochs = st.read_ctr.lookup(region.base_addr, region.n_chunks)
        if epochs is None:
            raise Rejected(f"no read counter covers {region.id}")
        vns = [VersionNumber(VnTag.FEATURE, st.ctr_in, e).value for e in epochs]
        return vns[0] if len(set(vns)) == 1 else vns

    def _check_write(self, region: TensorRegion, vns) -> None:
        if isinstance(self.memory, GuardNNMemory):
            for addr, n, vn in _runs(region, vns):
                if self.memory.would_reuse(addr, n, vn):
                    raise Rejected(f"write to {region.id} would reuse a counter value")

    def _read(self, region: TensorRegion, vns, log: TxLog) -> bytes | None:
        vn_arg = vns if isinstance(vns, int) else np.asarray(vns, dtype=np.uint64)
        pt, ok, rlog = self.memory.read_range(region.base_addr, region.n_chunks, vn_arg)
        log.extend(rlog)
        if not ok and self.state.integrity:
            self.state.failed = True
        return pt[: region.size_bytes] if pt is not None else None

    def _write(self, region: TensorRegion, data: bytes | None, vns, log: TxLog) -> None:
        for addr, n, vn in _runs(region, vns):
            off = addr - region.base_addr
            chunk = None if data is None else data[off : off + n * CHUNK_BYTES]
            log.extend(self.memory.write_range(addr, n, chunk, vn))

    # -- instructions --------------------------------------------------------
    def _get_pk(self, ins, log):
        ident = self.state.identity
        return ident.public_key + ident.certificate

    def _init_session(self, ins: InitSession, log):
        user_public = ins.user_public
        if not isinstance(user_public, (bytes, bytearray)):
            raise Rejected("invalid public element")
        try:
            crypto.load_public(user_public)
        except crypto.HandshakeError as exc:
            raise Rejected(str(exc)) from None
        eph = crypto.generate_keypair(self.rng)
        eph_pub = crypto.public_bytes(eph.public_key())
        context = bytes(user_public) + eph_pub
        ident = self.state.identity
        st = AcceleratorState(ident)
        st.session_key = crypto.key_agree(eph, user_public, context)
        st.mem_key = SymmetricKey.generate(self.rng, KeyRole.MEM_ENC)
        st.mac_key = SymmetricKey.generate(self.rng, KeyRole.MAC)
        st.session_id = hashlib.sha256(context).digest()
        st.mode = (DeviceMode.CONFIDENTIALITY_INTEGRITY if ins.want_integrity
                   else DeviceMode.CONFIDENTIALITY)
        st.digests = _fresh_digests()
        self.state = st
        self.memory.set_keys(st.mem_key, st.mac_key, bool(ins.want_integrity))
        sig = crypto.sign(ident.private_key, key_exchange_message(bytes(user_public), eph_pub))
        return eph_pub + sig

    def _set_weight(self, ins: SetWeight, log):
        st = self._need_session()
        rids = ins.regions
        if not isinstance(rids, tuple) or not rids or len(set(rids)) != len(rids):
            raise Rejected("SetWeight needs a list of distinct regions")
        regions = [self._region(r) for r in rids]
        if any(r.kind is not RegionKind.WEIGHT for r in regions):
            raise Rejected("SetWeight targets a non-weight region")
        if st.ctr_w + 1 > EPOCH_MAX:
            raise Rejected("weight counter exhausted; start a new session")
        vn = VersionNumber(VnTag.WEIGHT, 0, st.ctr_w + 1).value
        for r in regions:
            self._check_write(r, vn)
        pt = self._open(ins, ins.ciphertext, sum(r.size_bytes for r in regions))
        st.ctr_w += 1
        st.pending_weights.clear()
        off = 0
        for r in regions:
            part = None if pt is None else pt[off : off + r.size_bytes]
            self._write(r, part, vn, log)
            off += r.size_bytes
        if st.integrity and pt is not None:
            st.digests[DigestTag.WEIGHT].absorb(pt)
        return b""

    def _set_input(self, ins: SetInput, log):
        st = self._need_session()
        region = self._region(ins.region)
        if region.kind is not RegionKind.INPUT:
            raise Rejected("SetInput targets a non-input region")
        if st.ctr_in + 1 > PRIMARY_MAX:
            raise Rejected("input counter exhausted; start a new session")
        vn = VersionNumber(VnTag.INPUT, st.ctr_in + 1, 0).value
        self._check_write(region, vn)
        pt = self._open(ins, ins.ciphertext, region.size_bytes)
        st.ctr_in += 1
        st.ctr_fw = 0
        self._write(region, pt, vn, log)
        if st.integrity and pt is not None:
            st.digests[DigestTag.INPUT].absorb(pt)
        return b""

    def _slots(self, layer: Layer, ins: Forward) -> list[TensorRegion]:
        bits = self.dfg.bits
        in_b = tensor_bytes(math.prod(layer.in_shape), bits)
        out_b = tensor_bytes(math.prod(layer.out_shape), bits)
        w_b = tensor_bytes(layer.n_weights, bits)
        last = layer.index == len(self.dfg.layers)
        if ins.phase == "forward":
            default = [layer.input_region, layer.weight_region, layer.output_region]
            sizes = [in_b, w_b, out_b]
        elif ins.phase == "backward":
            grad_in = layer.output_region if last else self.dfg.gradient_of(layer.output_region)
            default = [grad_in, layer.input_region, layer.weight_region,
                       self.dfg.gradient_of(layer.input_region)]
            sizes = [out_b, in_b, w_b, in_b]
        else:
            raise Rejected(f"unknown phase {ins.phase!r}")
        if layer.weight_region is None:
            drop = 1 if ins.phase == "forward" else 2
            del default[drop], sizes[drop]
        rids = default if ins.regions is None else ins.regions
        if not isinstance(rids, (tuple, list)) or len(rids) != len(default):
            raise Rejected("operand region list has the wrong length")
        if any(r is None for r in rids):
            raise Rejected("layer has no gradient regions")
        regions = [self._region(r) for r in rids]
        for r, want in zip(regions, sizes):
            if r.size_bytes != want:
                raise Rejected(f"region {r.id} does not match the layer shape")
        return regions

    def _forward(self, ins: Forward, log):
        st = self._need_session()
        if not isinstance(ins.layer_index, int) or not 1 <= ins.layer_index <= len(self.dfg.layers):
            raise Rejected("no such layer")
        layer = self.dfg.layer(ins.layer_index)
        regions = self._slots(layer, ins)
        if ins.phase == "forward":
            self._forward_pass(st, layer, regions, log)
        else:
            self._backward_pass(st, layer, regions, log)
        return b""

    def _forward_pass(self, st, layer, regions, log):
        src, dst = regions[0], regions[-1]
        wreg = regions[1] if layer.weight_region else None
        if st.ctr_fw + 1 > EPOCH_MAX:
            raise Rejected("feature counter exhausted; start a new session")
        src_vn = self._read_vns(src)
        w_vn = self._read_vns(wreg) if wreg else None
        out_vn = VersionNumber(VnTag.FEATURE, st.ctr_in, st.ctr_fw + 1).value
        self._check_write(dst, out_vn)
        # accepted: from here on every access happens regardless of data
        x = self._read(src, src_vn, log)
        w = self._read(wreg, w_vn, log) if wreg else None
        y = None
        if self.functional:
            bits = self.dfg.bits
            xv = kernels.unpack(x, math.prod(layer.in_shape), bits)
            wv = kernels.unpack(w, layer.n_weights, bits) if wreg else None
            y = kernels.pack(kernels.forward(layer, xv, wv, bits), bits)
        st.ctr_fw += 1
        self._write(dst, y, out_vn, log)

    def _backward_pass(self, st, layer, regions, log):
        g_in, src = regions[0], regions[1]
        wreg = regions[2] if layer.weight_region else None
        g_out = regions[-1]
        if wreg is not None and st.ctr_w + 1 > EPOCH_MAX:
            raise Rejected("weight counter exhausted; start a new session")
        g_vn = self._read_vns(g_in)
        src_vn = self._read_vns(src)
        w_vn = self._read_vns(wreg) if wreg else None
        # gradients reuse the VN of their paired feature, i.e. the one just read
        gout_vn = src_vn
        self._check_write(g_out, gout_vn)
        new_w_vn = None
        if wreg is not None:
            new_w_vn = VersionNumber(VnTag.WEIGHT, 0, st.ctr_w + 1).value
            self._check_write(wreg, new_w_vn)
            if g_out.id == wreg.id:
                raise Rejected("gradient and weight update target the same region")
        g = self._read(g_in, g_vn, log)
        x = self._read(src, src_vn, log)
        w = self._read(wreg, w_vn, log) if wreg else None
        gi = nw = None
        if self.functional:
            bits = self.dfg.bits
            gv = kernels.unpack(g, math.prod(layer.out_shape), bits)
            xv = kernels.unpack(x, math.prod(layer.in_shape), bits)
            wv = kernels.unpack(w, layer.n_weights, bits) if wreg else None
            giv, nwv = kernels.backward(layer, gv, xv, wv, bits)
            gi = kernels.pack(giv, bits)
            nw = kernels.pack(nwv, bits) if wreg else None
        self._write(g_out, gi, gout_vn, log)
        if wreg is not None:
            self._write(wreg, nw, new_w_vn, log)
            st.pending_weights.add(wreg.id)
        if layer.index == 1 and st.pending_weights:
            st.ctr_w += 1
            st.pending_weights.clear()

    def _set_read_ctr(self, ins: SetReadCTR, log):
        st = self._need_session()
        rng_ = ins.addr_range
        if (not isinstance(rng_, (tuple, list)) or len(rng_) != 2
                or not all(isinstance(a, int) for a in rng_)):
            raise Rejected("malformed address range")
        start, end = rng_
        if start % CHUNK_BYTES or end % CHUNK_BYTES or not 0 <= start < end:
            raise Rejected("address range must be non-empty and chunk aligned")
        if not isinstance(ins.value, int) or not 0 <= ins.value <= EPOCH_MAX:
            raise Rejected("read counter out of range")
        st.read_ctr.set(start, end, ins.value)
        return b""

    def _export(self, ins: ExportOutput, log):
        st = self._need_session()
        if st.failed:
            raise Rejected("integrity failure earlier in this session")
        region = self._region(ins.region)
        vns = self._read_vns(region)
        pt = self._read(region, vns, log)
        if st.failed:
            # the read itself failed verification; nothing leaves the device
            raise Rejected("integrity verification failed")
        if not self.functional:
            return b""
        if st.integrity:
            st.digests[DigestTag.OUTPUT].absorb(pt)
        msg = crypto.seal(st.session_key, crypto.TO_USER, st.tx_seq, pt, ins.log_bytes())
        st.tx_seq += 1
        return msg

    def _sign(self, ins: SignOutput, log):
        st = self._need_session()
        if not st.integrity:
            raise Rejected("SignOutput needs integrity mode")
        if st.failed:
            raise Rejected("integrity failure earlier in this session")
        values = {t: st.digests[t].value() for t in DigestTag}
        sig = crypto.sign(st.identity.private_key, attestation_message(st.session_id, values))
        return b"".join(values[t] for t in DigestTag) + sig


def _runs(region: TensorRegion, vns):
    """Split a region into (addr, n_chunks, vn) runs of equal VN."""
    if isinstance(vns, int):
        yield region.base_addr, region.n_chunks, vns
        return
    start = 0
    for c in range(1, len(vns) + 1):
        if c == len(vns) or vns[c] != vns[start]:
            yield region.base_addr + start * CHUNK_BYTES, c - start, vns[start]
            start = c


def parse_sign_payload(payload: bytes) -> tuple[dict[DigestTag, bytes], bytes]:
    n = len(DigestTag)
    values = {t: payload[32 * i : 32 * (i + 1)] for i, t in enumerate(DigestTag)}
    return values, payload[32 * n :]


# -- host side -----------------------------------------------------------------

def compile_program(dfg: Dfg, steps) -> list[Instruction]:
    """Host compiler: one Forward per compute group, preceded by the SetReadCTR
    instructions its feature reads need."""
    program: list[Instruction] = []
    known: dict[tuple[int, int], int] = {}
    for group in compute_groups(steps):
        compute = next(s for s in group if s.kind is StepKind.COMPUTE)
        for st in group:
            if st.kind is not StepKind.READ or st.expected_read_ctr is None:
                continue
            r = dfg.region(st.region)
            span = (r.base_addr, r.end_addr)
            if known.get(span) != st.expected_read_ctr:
                program.append(SetReadCTR(span, st.expected_read_ctr))
                known[span] = st.expected_read_ctr
        program.append(Forward(compute.layer, compute.phase))
    return program


def feature_epochs(steps) -> dict[str, int]:
    """Final write epoch of every feature region in a schedule."""
    out = {}
    for st in steps:
        if st.kind is StepKind.WRITE and st.phase == "forward":
            out[st.region] = st.expected_read_ctr
    return out
