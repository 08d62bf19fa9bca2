"""Honest remote-user sessions and the attacks of the threat model.

Every scenario owns a fresh accelerator, so scenarios are independent and
reproducible from their seed.  Leak detection plants random 32-byte markers
in the user's plaintext and scans every byte the device emits or leaves in
DRAM (plus any export the host can open because it started the session).

Metadata tampering in the baseline engine needs the metadata to be off-chip;
the harness writes back and invalidates the metadata cache first, standing in
for the evictions a real attacker would provoke.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import crypto, kernels
from .client import RemoteUser
from .crypto import Rng
from .isa import (Accelerator, ExportOutput, Forward, GetPK, InitSession, Instruction, Opcode,
                  Response, SetInput, SetReadCTR, SetWeight, SignOutput, compile_program,
                  feature_epochs)
from .memprot import BaselineMemory, GuardNNMemory
from .memprot.engines import LINE
from .perfmodel import SchemeConfig, parse_scheme
from .workload import CHUNK_BYTES, Dfg, Mode, RegionKind, build_network, schedule

MARKER_BYTES = 32


# -- models and references --------------------------------------------------------

@dataclass
class Model:
    """Plaintext weights (by layer index) and input, already quantised."""
    dfg: Dfg
    weights: dict[int, np.ndarray]
    x: np.ndarray
    markers: list[bytes] = field(default_factory=list)

    @property
    def weight_ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.dfg.weight_regions)

    def weight_plaintext(self) -> bytes:
        bits = self.dfg.bits
        by_region = {l.weight_region: self.weights[l.index] for l in self.dfg.layers if l.weight_region}
        return b"".join(kernels.pack(by_region[r], bits) for r in self.weight_ids)

    def input_plaintext(self) -> bytes:
        return kernels.pack(self.x, self.dfg.bits)


def _plant(buf: bytes, rng: np.random.Generator, n: int, bits: int, count: int) -> tuple[np.ndarray, list[bytes]]:
    """Overwrite ``n`` random 32-byte slots of a packed tensor with markers."""
    data = bytearray(buf)
    slots = len(data) // MARKER_BYTES
    chosen = rng.choice(slots, size=min(count, slots), replace=False) if slots else []
    markers = []
    for s in sorted(int(c) for c in chosen):
        m = rng.bytes(MARKER_BYTES)
        data[s * MARKER_BYTES : (s + 1) * MARKER_BYTES] = m
        markers.append(m)
    return kernels.unpack(bytes(data), n, bits), markers


def make_model(dfg: Dfg, rng: np.random.Generator, markers_per_tensor: int = 0) -> Model:
    bits = dfg.bits
    weights = {}
    planted: list[bytes] = []
    for layer in dfg.layers:
        if not layer.weight_region:
            continue
        w = kernels.random_weights(rng, layer, bits)
        if markers_per_tensor:
            w, ms = _plant(kernels.pack(w, bits), rng, layer.n_weights, bits, markers_per_tensor)
            planted += ms
        weights[layer.index] = w
    n_in = math.prod(dfg.layers[0].in_shape)
    x = kernels.random_values(rng, n_in, bits)
    if markers_per_tensor:
        x, ms = _plant(kernels.pack(x, bits), rng, n_in, bits, markers_per_tensor)
        planted += ms
    return Model(dfg, weights, x, planted)


def reference_forward(model: Model) -> list[np.ndarray]:
    """Activations f0..fL computed in plaintext on the user's side."""
    acts = [model.x]
    for layer in model.dfg.layers:
        acts.append(kernels.forward(layer, acts[-1], model.weights.get(layer.index), model.dfg.bits))
    return acts


def reference_training(model: Model) -> tuple[list[np.ndarray], dict[int, np.ndarray]]:
    """One training step: activations and the updated weights."""
    acts = reference_forward(model)
    g = acts[-1]
    updated = {}
    for layer in reversed(model.dfg.layers):
        i = layer.index
        g, nw = kernels.backward(layer, g, acts[i - 1], model.weights.get(i), model.dfg.bits)
        if nw is not None:
            updated[i] = nw
    return acts, updated


# -- sessions -----------------------------------------------------------------------

def leaks(markers: list[bytes], blobs) -> bool:
    for blob in blobs:
        if blob and any(m in blob for m in markers):
            return True
    return False


class Session:
    """A user driving one accelerator, with a log of everything emitted."""

    def __init__(self, dfg: Dfg, scheme, seed: int = 0, cfg: SchemeConfig | None = None):
        self.cfg = cfg or SchemeConfig(parse_scheme(scheme))
        self.dfg = dfg
        self.acc = Accelerator(dfg, self.cfg.engine, self.cfg.params(), seed=seed)
        self.user = RemoteUser(Rng(seed).spawn())
        self.responses: list[Response] = []
        self.steps = schedule(dfg)
        self.epochs = feature_epochs(self.steps)

    def send(self, ins: Instruction, note: bool = True) -> Response:
        resp = self.acc.execute(ins)
        self.responses.append(resp)
        if note and ins.opcode not in (Opcode.SET_WEIGHT, Opcode.SET_INPUT, Opcode.EXPORT_OUTPUT):
            self.user.note(ins)
        return resp

    def open(self) -> bool:
        if not self.user.accept_device(self.send(GetPK())):
            return False
        ins = self.user.init_instruction(self.cfg.want_integrity)
        return self.user.complete_handshake(ins, self.send(ins, note=False))

    def import_model(self, model: Model) -> bool:
        ok = True
        if model.weight_ids:
            ok &= self.send(self.user.set_weight(model.weight_ids, model.weight_plaintext())).ok
        ok &= self.send(self.user.set_input("f0", model.input_plaintext())).ok
        return ok

    def program(self) -> list[Instruction]:
        return compile_program(self.dfg, self.steps)

    def export(self, rid: str, expected: bytes | None = None) -> bytes | None:
        """Export a region; the user's output digest absorbs ``expected``."""
        region = self.dfg.region(rid)
        if region.kind is RegionKind.FEATURE:
            self.send(SetReadCTR((region.base_addr, region.end_addr), self.epochs[rid]))
        ins = ExportOutput(rid)
        resp = self.send(ins, note=False)
        self.user.note(ins, expected)
        if not resp.ok:
            return None
        return self.user.open_export(ins, resp)

    def sign(self) -> tuple[bool, bool]:
        """(rejected by device, verified by user)."""
        resp = self.send(SignOutput())
        return (not resp.ok), self.user.verify_attestation(resp)

    def emitted(self) -> list[bytes]:
        return [r.payload for r in self.responses] + self.acc.memory.dram_images()

    def transcript_digest(self) -> str:
        h = hashlib.sha256()
        for r in self.responses:
            h.update(r.opcode.value.encode() + bytes([r.ok]) + r.payload + r.log.digest().encode())
        return h.hexdigest()


@dataclass
class SessionResult:
    scheme: str
    mode: str
    output_ok: bool
    attested: bool | None
    sign_rejected: bool
    leaked: bool
    transcript: str


def honest_session(network, scheme, seed: int = 0, mode: Mode | str | None = None,
                   model: Model | None = None, markers: int = 0) -> SessionResult:
    """Key exchange, import, run the schedule, export, attest."""
    if isinstance(network, Dfg):
        dfg = network
    else:
        dfg = build_network(network, mode or Mode.INFERENCE)
    rng = np.random.default_rng(seed)
    model = model or make_model(dfg, rng, markers)
    s = Session(dfg, scheme, seed)
    ok = s.open() and s.import_model(model)
    for ins in s.program():
        ok &= s.send(ins).ok
    bits = dfg.bits
    out_region = dfg.output_region.id
    if dfg.mode is Mode.TRAINING:
        acts, updated = reference_training(model)
        ref = kernels.pack(acts[-1], bits)
        got = s.export(out_region, ref)
        ok &= got == ref
        for layer in dfg.layers:
            if layer.weight_region:
                want = kernels.pack(updated[layer.index], bits)
                ok &= s.export(layer.weight_region, want) == want
    else:
        ref = kernels.pack(reference_forward(model)[-1], bits)
        ok &= s.export(out_region, ref) == ref
    rejected, verified = s.sign()
    integrity = s.cfg.want_integrity
    return SessionResult(s.cfg.scheme.value, dfg.mode.value, bool(ok),
                         verified if integrity else None, rejected,
                         leaks(model.markers, s.emitted()), s.transcript_digest())


# -- attacks ------------------------------------------------------------------------

@dataclass
class AttackOutcome:
    kind: str
    scheme: str
    detected: bool | None
    leaked: bool
    crashed: bool = False
    detail: str = ""
    seed: int = 0
    transcript: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scheme": self.scheme, "detected": self.detected,
                "leaked": self.leaked, "crashed": self.crashed, "detail": self.detail,
                "seed": self.seed, "transcript": self.transcript}


ATTACK_NETWORK = {
    "name": "attack-net", "bits": 8, "input": [192],
    "layers": [{"kind": "fc", "out": 128}, {"kind": "fc", "out": 96}, {"kind": "fc", "out": 16}],
}


def _chunk_lines(addr: int) -> range:
    return range(addr // LINE, addr // LINE + CHUNK_BYTES // LINE)


def _flip(arr: np.ndarray, byte: int, bit: int) -> None:
    flat = arr.reshape(-1).view(np.uint8)
    flat[byte] ^= np.uint8(1 << bit)


class _Off:
    """Locations of one chunk's metadata in the simulated DRAM."""

    def __init__(self, mem, addr: int):
        self.mem, self.addr = mem, addr

    def data(self, rng) -> tuple[np.ndarray, int]:
        return self.mem.data, self.addr + int(rng.integers(CHUNK_BYTES))

    def mac(self, rng) -> tuple[np.ndarray, int]:
        mem = self.mem
        if isinstance(mem, GuardNNMemory):
            return mem.macs, mem.mac_offset(self.addr) + int(rng.integers(mem.params.mac_width))
        line = int(rng.choice(list(_chunk_lines(self.addr))))
        return mem.line_macs, line * 8 + int(rng.integers(8))

    def node(self, level: int, rng) -> tuple[np.ndarray, int, int]:
        """(array, byte offset, max bit) of a counter or MAC byte of a path node."""
        mem: BaselineMemory = self.mem
        idx = self.addr // LINE // mem.params.tree_arity ** (level + 1)
        if rng.integers(2):
            slot = int(rng.integers(mem.params.tree_arity))
            off = (idx * mem.params.tree_arity + slot) * 8 + int(rng.integers(7))
            return mem.counters[level], off, 8
        return mem.node_macs[level], idx * 8 + int(rng.integers(8)), 8


TAMPER_TARGETS = ("ciphertext", "mac", "vn", "tree")


def tamper_attack(scheme, target: str = "ciphertext", seed: int = 0, when: str = "feature",
                  level: int | None = None, network: dict | None = None) -> AttackOutcome:
    """Flip one bit of DRAM state between its write and its next read.

    ``when``: ``input`` (f0 after import), ``weight`` (w2 after import) or
    ``feature`` (f1 after layer 1 wrote it).  ``level`` picks the tree level
    for ``target="tree"`` (default: random interior level).
    """
    rng = np.random.default_rng(seed)
    dfg = build_network(network or ATTACK_NETWORK, Mode.INFERENCE)
    model = make_model(dfg, rng, markers_per_tensor=2)
    s = Session(dfg, scheme, seed)
    kind = f"tamper/{target}/{when}" + (f"/L{level}" if level is not None else "")
    integrity = s.cfg.want_integrity
    mem = s.acc.memory
    if target in ("vn", "tree") and not isinstance(mem, BaselineMemory):
        raise ValueError(f"{target} tampering needs the baseline engine")
    if target == "mac" and not integrity:
        raise ValueError("no MACs exist without integrity protection")
    s.open()
    s.import_model(model)
    rid = {"input": "f0", "weight": "w2", "feature": "f1"}[when]
    program = s.program()
    split = 0
    if when == "feature":
        split = next(i for i, ins in enumerate(program)
                     if isinstance(ins, Forward) and ins.layer_index == 1) + 1
    for ins in program[:split]:
        s.send(ins)
    mem.flush(invalidate=True)
    region = dfg.region(rid)
    addr = region.base_addr + int(rng.integers(region.n_chunks)) * CHUNK_BYTES
    loc = _Off(mem, addr)
    if target == "ciphertext":
        arr, off = loc.data(rng)
        _flip(arr, off, int(rng.integers(8)))
    elif target == "mac":
        arr, off = loc.mac(rng)
        _flip(arr, off, int(rng.integers(8)))
    else:
        if target == "vn":
            lvl = 0
        else:
            lvl = level if level is not None else int(rng.integers(1, mem.levels))
            if not 1 <= lvl < mem.levels:
                raise ValueError(f"tree level must be in 1..{mem.levels - 1}")
        arr, off, nbits = loc.node(lvl, rng)
        _flip(arr, off, int(rng.integers(nbits)))
    for ins in program[split:]:
        s.send(ins)
    ref = kernels.pack(reference_forward(model)[-1], dfg.bits)
    s.export(dfg.output_region.id, ref)
    detected = _verdict(s)
    return AttackOutcome(kind, s.cfg.scheme.value, detected, leaks(model.markers, s.emitted()),
                         detail=f"region={rid} addr={addr:#x}", seed=seed,
                         transcript=s.transcript_digest())


def _verdict(s: Session) -> bool | None:
    """Integrity schemes: did the device flag the run or the user reject its attestation?"""
    if not s.cfg.want_integrity:
        return None
    _, verified = s.sign()
    return s.acc.state.failed or not verified


# replay: which off-chip parts the attacker rolls back
REPLAY_PARTS = {
    "guardnn": (("data",), ("mac",), ("data", "mac")),
    "baseline": (("data",), ("data", "mac"), ("data", "mac", "vn"), ("data", "mac", "vn", "tree")),
    "plain": (("data",),),
}


def _region_state(mem, region, parts) -> list[tuple[np.ndarray, slice, np.ndarray]]:
    """Copies of every off-chip byte range holding the region's state."""
    out = []
    lo, hi = region.base_addr, region.end_addr
    if "data" in parts:
        out.append((mem.data, slice(lo, hi)))
    if isinstance(mem, GuardNNMemory) and "mac" in parts:
        a = mem.mac_offset(lo)
        b = mem.mac_offset(hi - CHUNK_BYTES) + mem.params.mac_width
        out.append((mem.macs, slice(a, b)))
    if isinstance(mem, BaselineMemory):
        l0, l1 = lo // LINE, hi // LINE
        if "mac" in parts:
            out.append((mem.line_macs, slice(l0, l1)))
        a = mem.params.tree_arity
        n0, n1 = l0 // a, (l1 - 1) // a + 1
        for level in range(mem.levels):
            if (level == 0 and "vn" in parts) or (level > 0 and "tree" in parts):
                out.append((mem.counters[level], slice(n0, n1)))
                out.append((mem.node_macs[level], slice(n0, n1)))
            n0, n1 = n0 // a, (n1 - 1) // a + 1
    return [(arr, sl, arr[sl].copy()) for arr, sl in out]


def _restore(saved) -> None:
    for arr, sl, old in saved:
        arr[sl] = old


REPLAY_KINDS = ("feature", "weight", "input", "same_epoch")


def replay_attack(scheme, kind: str = "feature", parts: tuple[str, ...] = ("data", "mac"),
                  seed: int = 0) -> AttackOutcome:
    """Roll a region back to an older off-chip state after it was rewritten.

    * ``feature``: layer 1 writes f1 twice (epochs 1 and 2); epoch-1 state is
      restored before layer 2 reads f1 at epoch 2.
    * ``weight``: two SetWeight imports (CTR_W 1 and 2); the first is restored.
    * ``input``: two SetInput imports; the first is restored.
    * ``same_epoch``: the current state is "restored" with no intervening
      write, which is not a replay and must read back fine.
    """
    rng = np.random.default_rng(seed)
    spec = {**ATTACK_NETWORK, "layers": [dict(l) for l in ATTACK_NETWORK["layers"]]}
    if kind == "feature":
        spec["layers"][0]["writes"] = 2
    dfg = build_network(spec, Mode.INFERENCE)
    model = make_model(dfg, rng, markers_per_tensor=2)
    s = Session(dfg, scheme, seed)
    mem = s.acc.memory
    integrity = s.cfg.want_integrity
    s.open()
    program = s.program()
    bits = dfg.bits
    if kind == "weight":
        old = make_model(dfg, rng, markers_per_tensor=2)
        s.send(s.user.set_weight(old.weight_ids, old.weight_plaintext()))
        mem.flush(invalidate=True)
        saved = _region_state(mem, dfg.region("w1"), parts)
        s.import_model(model)
        mem.flush(invalidate=True)
        _restore(saved)
        markers = model.markers + old.markers
        rest = program
    elif kind == "input":
        old = make_model(dfg, rng, markers_per_tensor=2)
        old.weights = model.weights
        s.import_model(old)
        mem.flush(invalidate=True)
        saved = _region_state(mem, dfg.region("f0"), parts)
        s.send(s.user.set_input("f0", model.input_plaintext()))
        mem.flush(invalidate=True)
        _restore(saved)
        markers = model.markers + old.markers
        rest = program
    elif kind in ("feature", "same_epoch"):
        s.import_model(model)
        fwd1 = [i for i, ins in enumerate(program) if isinstance(ins, Forward) and ins.layer_index == 1]
        first, last = fwd1[0], fwd1[-1]
        for ins in program[: first + 1]:
            s.send(ins)
        mem.flush(invalidate=True)
        saved = _region_state(mem, dfg.region("f1"), parts)
        for ins in program[first + 1 : last + 1]:
            s.send(ins)
        mem.flush(invalidate=True)
        if kind == "same_epoch":
            saved = _region_state(mem, dfg.region("f1"), parts)
        _restore(saved)
        markers = model.markers
        rest = program[last + 1 :]
    else:
        raise ValueError(f"unknown replay kind {kind!r}")
    for ins in rest:
        s.send(ins)
    ref = kernels.pack(reference_forward(model)[-1], bits)
    got = s.export(dfg.output_region.id, ref)
    detected = _verdict(s)
    return AttackOutcome(f"replay/{kind}/{'+'.join(parts)}", s.cfg.scheme.value, detected,
                         leaks(markers, s.emitted()), detail=f"output_ok={got == ref}",
                         seed=seed, transcript=s.transcript_digest())


def replay_corpus(scheme) -> list[tuple[str, tuple[str, ...]]]:
    """Every (kind, rolled-back parts) interleaving for a scheme."""
    engine = SchemeConfig(parse_scheme(scheme)).engine
    return [(k, p) for k in ("feature", "weight", "input") for p in REPLAY_PARTS[engine]]


def wrong_read_ctr(scheme, delta: int = 1, seed: int = 0, layer: int = 2) -> AttackOutcome:
    """The host supplies CTR_F,R off by ``delta`` for the input feature of ``layer``."""
    rng = np.random.default_rng(seed)
    dfg = build_network(ATTACK_NETWORK, Mode.INFERENCE)
    model = make_model(dfg, rng, markers_per_tensor=2)
    s = Session(dfg, scheme, seed)
    integrity = s.cfg.want_integrity
    s.open()
    s.import_model(model)
    target = dfg.region(dfg.layer(layer).input_region)
    first_failure = None
    for ins in s.program():
        sent = ins
        if isinstance(ins, SetReadCTR) and ins.addr_range == (target.base_addr, target.end_addr):
            sent = SetReadCTR(ins.addr_range, ins.value + delta)
        s.send(sent, note=False)
        s.user.note(ins)
        if first_failure is None and s.acc.state.failed:
            first_failure = f"{sent.opcode.value}({getattr(sent, 'layer_index', '')})"
    ref = kernels.pack(reference_forward(model)[-1], dfg.bits)
    got = s.export(dfg.output_region.id, ref)
    detected = _verdict(s)
    return AttackOutcome(f"wrong_read_ctr/{delta:+d}", s.cfg.scheme.value, detected,
                         leaks(model.markers, s.emitted()),
                         detail=f"output_ok={got == ref} first_failure={first_failure}",
                         seed=seed, transcript=s.transcript_digest())


# -- attestation -------------------------------------------------------------------

DIVERGENCES = ("order", "operand", "weight", "input")


def random_network(rng: np.random.Generator, max_layers: int = 3) -> dict:
    """A small random network description (fc chain or conv front end)."""
    bits = int(rng.choice([6, 8, 8, 16]))
    layers = []
    if rng.integers(3) == 0:
        c, h = int(rng.integers(1, 4)), int(rng.integers(6, 13))
        inp = [c, h, h]
        layers.append({"kind": "conv", "out": int(rng.integers(2, 7)), "kernel": 3, "stride": 1,
                       "pad": 1, "pool": int(rng.choice([1, 2]))})
    else:
        inp = [int(rng.integers(8, 300))]
    for _ in range(int(rng.integers(1, max_layers + 1))):
        if rng.integers(6) == 0:
            layers.append({"kind": "identity"})
        else:
            layers.append({"kind": "fc", "out": int(rng.integers(4, 129))})
    if layers[-1]["kind"] == "identity":
        layers.append({"kind": "fc", "out": int(rng.integers(4, 33))})
    return {"name": "random", "bits": bits, "input": inp, "layers": layers}


def attestation_trial(divergence: str, seed: int = 0, scheme="GuardNN_CI") -> tuple[bool, bool]:
    """(honest run verifies, divergent run verifies) for one randomized trial."""
    if divergence not in DIVERGENCES:
        raise ValueError(f"unknown divergence {divergence!r}")
    rng = np.random.default_rng(seed)
    spec = random_network(rng)
    dfg = build_network(spec, Mode.INFERENCE)
    model = make_model(dfg, rng)
    ref = kernels.pack(reference_forward(model)[-1], dfg.bits)
    pick = np.random.default_rng(seed + 1_000_003)

    def one(diverge: bool) -> bool:
        s = Session(dfg, scheme, seed)
        s.open()
        program = s.program()
        user = s.user
        if diverge and divergence in ("weight", "input"):
            if divergence == "weight" and model.weight_ids:
                good = model.weight_plaintext()
                bad = _substitute(good, pick)
                tmpl = SetWeight(None, model.weight_ids)
                s.send(SetWeight(user._seal(tmpl, bad), model.weight_ids), note=False)
                user.note(tmpl, good)
                s.send(user.set_input("f0", model.input_plaintext()))
            else:
                if model.weight_ids:
                    s.send(user.set_weight(model.weight_ids, model.weight_plaintext()))
                good = model.input_plaintext()
                tmpl = SetInput(None, "f0")
                s.send(SetInput(user._seal(tmpl, _substitute(good, pick)), "f0"), note=False)
                user.note(tmpl, good)
        else:
            s.import_model(model)
        sent = list(program)
        if diverge and divergence == "order":
            cands = [i for i in range(len(sent) - 1) if sent[i] != sent[i + 1]]
            if cands:
                i = int(pick.choice(cands))
                sent[i], sent[i + 1] = sent[i + 1], sent[i]
            else:
                sent = sent[::-1] + [sent[0]]
        elif diverge and divergence == "operand":
            i = int(pick.integers(len(sent)))
            sent[i] = _alter(sent[i], dfg, pick)
        for ins in sent:
            s.send(ins, note=False)
        for ins in program:
            user.note(ins)
        s.export(dfg.output_region.id, ref)
        return s.sign()[1]

    return one(False), one(True)


def _substitute(data: bytes, rng: np.random.Generator) -> bytes:
    b = bytearray(data)
    i = int(rng.integers(len(b)))
    b[i] ^= int(rng.integers(1, 256))
    return bytes(b)


def _alter(ins: Instruction, dfg: Dfg, rng: np.random.Generator) -> Instruction:
    if isinstance(ins, SetReadCTR):
        if rng.integers(2):
            return SetReadCTR(ins.addr_range, ins.value + int(rng.integers(1, 4)))
        s, e = ins.addr_range
        return SetReadCTR((s, e + CHUNK_BYTES), ins.value)
    if isinstance(ins, Forward):
        others = [i for i in range(1, len(dfg.layers) + 2) if i != ins.layer_index]
        return Forward(int(rng.choice(others)), ins.phase, ins.regions)
    raise TypeError(type(ins))


# -- fuzzing --------------------------------------------------------------------------

FUZZ_NETWORK = {
    "name": "fuzz-net", "bits": 8, "input": [256],
    "layers": [{"kind": "identity"}, {"kind": "fc", "out": 64}, {"kind": "fc", "out": 32}],
}


def fuzz_host(scheme, seed: int = 0, n_instructions: int = 10_000,
              network: dict | None = None) -> AttackOutcome:
    """Random well-formed instruction streams from an untrusted host.

    The user imports marker-laden weights and inputs; the host then issues
    ``n_instructions`` random instructions, including its own InitSession
    (after which it holds the session key and can open exports), replays of
    the user's import messages, arbitrary read counters and region
    overrides.  Occasionally the user re-imports in a fresh session.
    """
    rng = np.random.default_rng(seed)
    dfg = build_network(network or FUZZ_NETWORK, Mode.TRAINING)
    model = make_model(dfg, rng, markers_per_tensor=2)
    markers = model.markers
    cfg = SchemeConfig(parse_scheme(scheme))
    acc = Accelerator(dfg, cfg.engine, cfg.params(), seed=seed)
    region_ids = [r.id for r in dfg.regions]
    spans = [(r.base_addr, r.end_addr) for r in dfg.regions]
    n_layers = len(dfg.layers)
    pool: list[Instruction] = []
    stats = {"accepted": 0, "rejected": 0, "crashes": 0, "host_sessions": 0, "user_sessions": 0}
    leaked = False
    host: RemoteUser | None = None
    host_rng = Rng(seed + 7919)
    user_rng = Rng(seed + 104729)

    def ex(ins: Instruction) -> Response | None:
        nonlocal leaked
        try:
            resp = acc.execute(ins)
        except Exception:                       # any crash is a finding
            stats["crashes"] += 1
            return None
        stats["accepted" if resp.ok else "rejected"] += 1
        blobs = [resp.payload] + acc.memory.dram_images()
        if resp.ok and host is not None and host.session_key is not None and isinstance(ins, ExportOutput):
            try:
                blobs.append(host.open_export(ins, resp))
            except crypto.TransportError:
                pass
        if leaks(markers, blobs):
            leaked = True
        return resp

    def user_session() -> None:
        nonlocal host
        u = RemoteUser(user_rng.spawn())
        if not u.accept_device(ex(GetPK()) or Response(Opcode.GET_PK, False)):
            return
        ins = u.init_instruction(cfg.want_integrity)
        resp = ex(ins)
        if resp is None or not u.complete_handshake(ins, resp):
            return
        host = None
        stats["user_sessions"] += 1
        imports = [u.set_weight(model.weight_ids, model.weight_plaintext()),
                   u.set_input("f0", model.input_plaintext())]
        for imp in imports:
            ex(imp)
        pool.extend(imports)
        del pool[:-16]

    def host_session() -> None:
        nonlocal host
        h = RemoteUser(host_rng.spawn())
        h.accept_device(ex(GetPK()) or Response(Opcode.GET_PK, False))
        ins = h.init_instruction(bool(rng.integers(2)))
        resp = ex(ins)
        if resp is not None and h.complete_handshake(ins, resp):
            host = h
            stats["host_sessions"] += 1

    def rand_regions(n: int | None = None) -> tuple[str, ...]:
        n = n or int(rng.integers(1, 5))
        return tuple(str(rng.choice(region_ids)) for _ in range(n))

    def payload(template: Instruction, n: int) -> bytes:
        r = rng.random()
        if r < 0.4 and pool:
            return getattr(pool[int(rng.integers(len(pool)))], "ciphertext")
        if r < 0.7 and host is not None and host.session_key is not None:
            return host._seal(template, rng.bytes(n))
        return rng.bytes(int(rng.integers(0, n + 40)))

    user_session()
    for _ in range(n_instructions):
        r = rng.random()
        if r < 0.02:
            ins: Instruction = GetPK()
        elif r < 0.05:
            user_session()
            continue
        elif r < 0.08:
            host_session()
            continue
        elif r < 0.09:
            ins = InitSession(rng.bytes(int(rng.choice([0, 33, 65]))), bool(rng.integers(2)))
        elif r < 0.18:
            regions = (tuple(r.id for r in dfg.weight_regions) if rng.random() < 0.6
                       else rand_regions())
            size = sum(dfg.region(x).size_bytes for x in regions)
            ins = SetWeight(payload(SetWeight(None, regions), size), regions)
        elif r < 0.26:
            rid = "f0" if rng.random() < 0.7 else str(rng.choice(region_ids))
            ins = SetInput(payload(SetInput(None, rid), dfg.region(rid).size_bytes), rid)
        elif r < 0.60:
            layer = int(rng.integers(0, n_layers + 2))
            phase = str(rng.choice(["forward", "forward", "backward", "sideways"]))
            regions = rand_regions() if rng.random() < 0.25 else None
            ins = Forward(layer, phase, regions)
        elif r < 0.80:
            if rng.random() < 0.7:
                start, end = spans[int(rng.integers(len(spans)))]
            else:
                start = int(rng.integers(0, 64)) * int(rng.choice([CHUNK_BYTES, 64, 1]))
                end = start + int(rng.integers(0, 8)) * CHUNK_BYTES
            value = int(rng.choice([int(rng.integers(0, 6)), int(rng.integers(0, 2**32)), 2**32]))
            ins = SetReadCTR((start, end), value)
        elif r < 0.96:
            rid = str(rng.choice(region_ids)) if rng.random() < 0.95 else "nowhere"
            ins = ExportOutput(rid)
        else:
            ins = SignOutput()
        ex(ins)
    detail = ", ".join(f"{k}={v}" for k, v in stats.items())
    return AttackOutcome("fuzz", cfg.scheme.value, None, leaked, stats["crashes"] > 0,
                         detail=detail, seed=seed)
