"""Transaction counts and roofline timing for the four protection schemes.

Only the schedule is measured: the weight and input imports run first, the
metadata cache is then written back and invalidated, and the final
write-back after the last instruction is charged to that instruction.

Timing is a roofline per compute instruction::

    compute = ceil(MACs / compute_rate)          (backward: 2x forward MACs)
    memory  = ceil(transactions * 64 / bandwidth) + ceil(stall)
    cycles  = max(compute, memory)
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import kernels
from .client import RemoteUser
from .crypto import Rng
from .isa import Accelerator, Forward, GetPK, SetInput, SetWeight, compile_program
from .memprot import ProtectionParams, Purpose, TxLog
from .workload import Dfg, StepKind

LATENCY = 12


class Scheme(str, Enum):
    NP = "NP"
    BP = "BP"
    GUARDNN_C = "GuardNN_C"
    GUARDNN_CI = "GuardNN_CI"


SCHEME_ALIASES = {"baseline": Scheme.BP, "np": Scheme.NP, "bp": Scheme.BP,
                  "guardnn_c": Scheme.GUARDNN_C, "guardnn_ci": Scheme.GUARDNN_CI}

# scheme -> (memory engine, integrity requested at InitSession)
SCHEME_ENGINE = {
    Scheme.NP: ("plain", False),
    Scheme.BP: ("baseline", True),
    Scheme.GUARDNN_C: ("guardnn", False),
    Scheme.GUARDNN_CI: ("guardnn", True),
}
SCHEME_ORDER = (Scheme.NP, Scheme.GUARDNN_C, Scheme.GUARDNN_CI, Scheme.BP)


class SimulationError(RuntimeError):
    """An honest run failed verification or was rejected: a simulator bug."""


def parse_scheme(name: str) -> Scheme:
    try:
        return Scheme(name)
    except ValueError:
        pass
    key = str(name).lower()
    if key in SCHEME_ALIASES:
        return SCHEME_ALIASES[key]
    raise ValueError(f"unknown scheme {name!r}")


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme
    mac_width_bytes: int = 8
    cache_capacity: int = 32 * 1024
    tree_arity: int = 8
    bandwidth: float = 48.0          # bytes per cycle
    transaction_bytes: int = 64
    compute_rate: int = 65536        # MACs per cycle
    keystream_latency: int = LATENCY
    memory_parallelism: int = 8

    def __post_init__(self):
        object.__setattr__(self, "scheme", parse_scheme(self.scheme))
        if self.transaction_bytes != 64:
            raise ValueError("transactions are 64 B")
        if self.bandwidth <= 0 or self.compute_rate <= 0:
            raise ValueError("bandwidth and compute rate must be positive")

    @property
    def engine(self) -> str:
        return SCHEME_ENGINE[self.scheme][0]

    @property
    def want_integrity(self) -> bool:
        return SCHEME_ENGINE[self.scheme][1]

    def params(self) -> ProtectionParams:
        return ProtectionParams(self.mac_width_bytes, self.cache_capacity, self.tree_arity,
                                self.keystream_latency, self.memory_parallelism)

    def with_scheme(self, scheme) -> "SchemeConfig":
        return replace(self, scheme=parse_scheme(scheme))

    def to_dict(self) -> dict:
        return {"scheme": self.scheme.value, "mac_width_bytes": self.mac_width_bytes,
                "cache_capacity": self.cache_capacity, "tree_arity": self.tree_arity,
                "bandwidth": self.bandwidth, "transaction_bytes": self.transaction_bytes,
                "compute_rate": self.compute_rate, "keystream_latency": self.keystream_latency,
                "memory_parallelism": self.memory_parallelism}


@dataclass
class LayerTraffic:
    phase: str
    layer: int
    counts: dict[Purpose, int]
    stall: float = 0.0

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class TrafficReport:
    scheme: Scheme
    schedule_digest: str
    layers: list[LayerTraffic] = field(default_factory=list)
    traffic_increase: float | None = None

    def count(self, purpose: Purpose) -> int:
        return sum(l.counts[purpose] for l in self.layers)

    @property
    def totals(self) -> dict[Purpose, int]:
        return {p: self.count(p) for p in Purpose}

    @property
    def total(self) -> int:
        return sum(l.total for l in self.layers)


@dataclass
class LayerTiming:
    phase: str
    layer: int
    compute: int
    memory: int

    @property
    def cycles(self) -> int:
        return max(self.compute, self.memory)

    @property
    def bound(self) -> str:
        return "memory" if self.memory > self.compute else "compute"


@dataclass
class TimingReport:
    scheme: Scheme
    layers: list[LayerTiming] = field(default_factory=list)
    slowdown: float | None = None

    @property
    def total(self) -> int:
        return sum(l.cycles for l in self.layers)

    @property
    def compute(self) -> int:
        return sum(l.compute for l in self.layers)

    @property
    def memory(self) -> int:
        return sum(l.memory for l in self.layers)


def schedule_digest(dfg: Dfg, steps) -> str:
    h = hashlib.sha256(f"{dfg.name}|{dfg.mode.value}|{dfg.bits}".encode())
    for r in dfg.regions:
        h.update(f"{r.id},{r.base_addr},{r.size_bytes};".encode())
    for s in steps:
        h.update(f"{s}@{s.layer}/{s.phase}/{s.expected_read_ctr};".encode())
    return h.hexdigest()


def timing_of(dfg: Dfg, traffic: TrafficReport, cfg: SchemeConfig) -> TimingReport:
    rep = TimingReport(traffic.scheme)
    for lt in traffic.layers:
        layer = dfg.layer(lt.layer)
        macs = layer.macs * (2 if lt.phase == "backward" else 1)
        compute = math.ceil(macs / cfg.compute_rate)
        memory = math.ceil(lt.total * cfg.transaction_bytes / cfg.bandwidth) + math.ceil(lt.stall)
        rep.layers.append(LayerTiming(lt.phase, lt.layer, compute, memory))
    return rep


def random_model(dfg: Dfg, rng: np.random.Generator) -> tuple[list, np.ndarray]:
    """Random weights per weight region and a random input."""
    ws = [kernels.random_weights(rng, layer, dfg.bits) for layer in dfg.layers if layer.weight_region]
    x = kernels.random_values(rng, math.prod(dfg.layers[0].in_shape), dfg.bits) if dfg.layers else None
    return ws, x


@dataclass
class RunResult:
    traffic: TrafficReport
    timing: TimingReport
    accelerator: Accelerator
    trace: TxLog


def run(steps, dfg: Dfg, scheme: SchemeConfig | Scheme | str, seed: int = 0,
        functional: bool = False, data_seed: int | None = None) -> RunResult:
    """Drive one honest session through the ISA and measure the schedule."""
    cfg = scheme if isinstance(scheme, SchemeConfig) else SchemeConfig(parse_scheme(scheme))
    steps = tuple(steps)
    acc = Accelerator(dfg, cfg.engine, cfg.params(), seed=seed, functional=functional)
    user = RemoteUser(Rng(seed).spawn())
    if not user.accept_device(acc.execute(GetPK())):
        raise SimulationError("device certificate did not verify")
    ins = user.init_instruction(cfg.want_integrity)
    if not user.complete_handshake(ins, acc.execute(ins)):
        raise SimulationError("key exchange failed")

    if dfg.layers:
        wids = tuple(r.id for r in dfg.weight_regions)
        if functional:
            ws, x = random_model(dfg, np.random.default_rng(seed if data_seed is None else data_seed))
            wpt = b"".join(kernels.pack(w, dfg.bits) for w in ws)
            xpt = kernels.pack(x, dfg.bits)
            imports = ([user.set_weight(wids, wpt)] if wids else []) + [user.set_input("f0", xpt)]
        else:
            imports = ([SetWeight(None, wids)] if wids else []) + [SetInput(None, "f0")]
        for imp in imports:
            resp = acc.execute(imp)
            if not resp.ok:
                raise SimulationError(f"import rejected: {resp.error}")
    acc.memory.flush(invalidate=True)

    traffic = TrafficReport(cfg.scheme, schedule_digest(dfg, steps))
    trace = TxLog()
    for ins in compile_program(dfg, steps):
        resp = acc.execute(ins)
        if not resp.ok:
            raise SimulationError(f"{ins.opcode.value} rejected: {resp.error}")
        if isinstance(ins, Forward):
            traffic.layers.append(LayerTraffic(ins.phase, ins.layer_index, dict(resp.log.counts),
                                               resp.log.stall_cycles))
            trace.extend(resp.log)
    tail = acc.memory.flush(invalidate=True)
    if traffic.layers:
        last = traffic.layers[-1]
        for p, n in tail.counts.items():
            last.counts[p] += n
        last.stall += tail.stall_cycles
        trace.extend(tail)
    if acc.state.failed or not trace.verified:
        raise SimulationError("verification failed in an honest run")
    return RunResult(traffic, timing_of(dfg, traffic, cfg), acc, trace)


def traffic_increase(report: TrafficReport, np_report: TrafficReport) -> float:
    if report.schedule_digest != np_report.schedule_digest:
        raise ValueError("reports come from different schedules")
    if np_report.total == 0:
        return 1.0 if report.total == 0 else math.inf
    return report.total / np_report.total


def slowdown(timing: TimingReport, timing_np: TimingReport) -> float:
    if timing_np.total == 0:
        return 1.0 if timing.total == 0 else math.inf
    return timing.total / timing_np.total


def memory_bound(timing_np: TimingReport) -> bool:
    """A cell is memory bound when its NP memory time exceeds its compute time."""
    return timing_np.memory > timing_np.compute


def mac_oracle(dfg: Dfg, steps, mac_width: int = 8) -> int:
    """Closed-form GuardNN_CI MAC transactions: ceil(chunks * width / 64) per region pass."""
    total = 0
    for s in steps:
        if s.kind is StepKind.COMPUTE:
            continue
        total += -(-dfg.region(s.region).n_chunks * mac_width // 64)
    return total
