"""DNN dataflow graphs, address layout and the coarse-grained access schedule.

A network description is a plain dict (or JSON file) of the form::

    {"name": "mlp-tiny", "bits": 8, "input": [784],
     "layers": [{"kind": "fc", "out": 512},
                {"kind": "conv", "out": 64, "kernel": 3, "stride": 1,
                 "pad": 1, "pool": 2},
                {"kind": "identity"}]}

Layer keys: ``kind`` (fc | conv | identity), ``out`` (units / channels),
``kernel``, ``stride``, ``pad``, ``pool`` (non-overlapping max pool applied
after the activation), ``relu`` (default: every layer but the last),
``bias`` (default true) and ``writes`` (how many times the layer writes its
output region per input; default 1).

Regions are laid out first-fit from address 0, 512-B aligned, in the order
weights (w1..wL), input (f0), features (f1..fL), gradients (g0..g{L-1}).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

CHUNK_BYTES = 512


class LayoutError(ValueError):
    """Regions overlap, are unaligned or otherwise violate the layout rules."""


class ScheduleError(ValueError):
    """The graph cannot be turned into a valid schedule."""


class RegionKind(str, Enum):
    INPUT = "Input"
    WEIGHT = "Weight"
    FEATURE = "Feature"
    GRADIENT = "Gradient"


class Mode(str, Enum):
    INFERENCE = "inference"
    TRAINING = "training"


class StepKind(str, Enum):
    READ = "R"
    WRITE = "W"
    COMPUTE = "C"


@dataclass(frozen=True)
class TensorRegion:
    id: str
    kind: RegionKind
    base_addr: int
    size_bytes: int
    layer_index: int
    paired_feature: str | None = None

    @property
    def n_chunks(self) -> int:
        return max(1, -(-self.size_bytes // CHUNK_BYTES))

    @property
    def span(self) -> int:
        """Bytes occupied in the address space (whole chunks)."""
        return self.n_chunks * CHUNK_BYTES

    @property
    def end_addr(self) -> int:
        return self.base_addr + self.span


@dataclass(frozen=True)
class Layer:
    index: int
    op: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    input_region: str
    output_region: str
    weight_region: str | None = None
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    pool: int = 1
    relu: bool = True
    bias: bool = True
    writes: int = 1

    @property
    def conv_shape(self) -> tuple[int, ...]:
        """Output shape before pooling."""
        if self.op != "conv":
            return self.out_shape
        c, h, w = self.out_shape
        _, hi, wi = self.in_shape
        ho = (hi + 2 * self.pad - self.kernel) // self.stride + 1
        wo = (wi + 2 * self.pad - self.kernel) // self.stride + 1
        return (c, ho, wo)

    @property
    def n_weights(self) -> int:
        if self.op == "fc":
            n = self.in_shape[0] * self.out_shape[0]
            return n + (self.out_shape[0] if self.bias else 0)
        if self.op == "conv":
            n = self.out_shape[0] * self.in_shape[0] * self.kernel * self.kernel
            return n + (self.out_shape[0] if self.bias else 0)
        return 0

    @property
    def macs(self) -> int:
        """Multiply-accumulate count of the forward pass."""
        if self.op == "fc":
            return self.in_shape[0] * self.out_shape[0]
        if self.op == "conv":
            c, ho, wo = self.conv_shape
            return c * ho * wo * self.in_shape[0] * self.kernel * self.kernel
        return 0


@dataclass(frozen=True)
class Dfg:
    name: str
    bits: int
    mode: Mode
    layers: tuple[Layer, ...]
    regions: tuple[TensorRegion, ...]
    _by_id: dict = field(init=False, repr=False, compare=False)
    _grad_of: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {r.id: r for r in self.regions})
        object.__setattr__(self, "_grad_of", {
            r.paired_feature: r.id for r in self.regions if r.kind is RegionKind.GRADIENT})

    def region(self, rid: str) -> TensorRegion:
        return self._by_id[rid]

    def has_region(self, rid: str) -> bool:
        return rid in self._by_id

    def layer(self, index: int) -> Layer:
        if not 1 <= index <= len(self.layers):
            raise KeyError(index)
        return self.layers[index - 1]

    def gradient_of(self, rid: str) -> str | None:
        return self._grad_of.get(rid)

    @property
    def address_space(self) -> int:
        return max((r.end_addr for r in self.regions), default=0)

    @property
    def weight_regions(self) -> list[TensorRegion]:
        return [r for r in self.regions if r.kind is RegionKind.WEIGHT]

    @property
    def input_region(self) -> TensorRegion | None:
        return next((r for r in self.regions if r.kind is RegionKind.INPUT), None)

    @property
    def output_region(self) -> TensorRegion | None:
        return self.region(self.layers[-1].output_region) if self.layers else None

    def validate(self) -> None:
        ordered = sorted(self.regions, key=lambda r: r.base_addr)
        for r in ordered:
            if r.base_addr % CHUNK_BYTES:
                raise LayoutError(f"region {r.id} at {r.base_addr:#x} is not {CHUNK_BYTES}-B aligned")
        for a, b in zip(ordered, ordered[1:]):
            if b.base_addr < a.end_addr:
                raise LayoutError(f"regions {a.id} and {b.id} overlap")
        for r in self.regions:
            if r.kind is RegionKind.GRADIENT:
                if r.paired_feature is None or not self.has_region(r.paired_feature):
                    raise ScheduleError(f"gradient {r.id} has no paired feature")
                f = self.region(r.paired_feature)
                if f.kind not in (RegionKind.FEATURE, RegionKind.INPUT) or f.size_bytes != r.size_bytes:
                    raise ScheduleError(f"gradient {r.id} is not paired with a same-size feature")
        writers: dict[str, int] = {}
        for layer in self.layers:
            if layer.input_region == layer.output_region:
                raise LayoutError(f"layer {layer.index} reads and writes region {layer.input_region}")
            writers[layer.output_region] = writers.get(layer.output_region, 0) + 1
        for rid, n in writers.items():
            if n > 1:
                raise ScheduleError(f"feature region {rid} has {n} writers")


def tensor_bytes(n_elems: int, bits: int) -> int:
    return -(-n_elems * bits // 8)


def _infer_layer_shapes(in_shape: tuple[int, ...], spec: Mapping[str, Any]) -> tuple[tuple[int, ...], dict]:
    kind = spec["kind"]
    if kind == "fc":
        n_in = math.prod(in_shape)
        return (int(spec["out"]),), {"in_shape": (n_in,)}
    if kind == "conv":
        if len(in_shape) != 3:
            raise ValueError(f"conv layer needs a (C, H, W) input, got {in_shape}")
        k = int(spec.get("kernel", 3))
        s = int(spec.get("stride", 1))
        p = int(spec.get("pad", 0))
        pool = int(spec.get("pool", 1))
        c, h, w = in_shape
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"conv layer shrinks {in_shape} to nothing")
        out = (int(spec["out"]), ho // pool, wo // pool)
        return out, {"kernel": k, "stride": s, "pad": p, "pool": pool}
    if kind == "identity":
        return tuple(in_shape), {}
    raise ValueError(f"unknown layer kind {kind!r}")


def build_network(spec: Mapping[str, Any], mode: Mode | str = Mode.INFERENCE) -> Dfg:
    """Build a laid-out dataflow graph from a network description."""
    mode = Mode(mode)
    bits = int(spec.get("bits", 8))
    if bits not in (6, 8, 16):
        raise ValueError(f"unsupported element width {bits}")
    layer_specs = list(spec.get("layers", []))
    name = str(spec.get("name", "network"))
    if not layer_specs:
        return Dfg(name, bits, mode, (), ())

    shape = tuple(int(d) for d in spec["input"])
    shapes = [shape]
    proto = []
    for i, ls in enumerate(layer_specs, start=1):
        out, extra = _infer_layer_shapes(shapes[-1], ls)
        in_shape = extra.pop("in_shape", shapes[-1])
        proto.append((i, ls, in_shape, out, extra))
        shapes.append(out)

    n = len(proto)
    layers = []
    for i, ls, in_shape, out, extra in proto:
        layers.append(Layer(
            index=i, op=ls["kind"], in_shape=in_shape, out_shape=out,
            input_region=f"f{i - 1}", output_region=f"f{i}",
            weight_region=None if ls["kind"] == "identity" else f"w{i}",
            relu=bool(ls.get("relu", i < n)), bias=bool(ls.get("bias", True)),
            writes=int(ls.get("writes", 1)), **extra,
        ))
        if layers[-1].writes < 1:
            raise ValueError(f"layer {i}: writes must be >= 1")

    # (id, kind, bytes, layer, paired) in allocation order
    wanted = []
    for layer in layers:
        if layer.weight_region:
            wanted.append((layer.weight_region, RegionKind.WEIGHT,
                           tensor_bytes(layer.n_weights, bits), layer.index, None))
    wanted.append(("f0", RegionKind.INPUT, tensor_bytes(math.prod(shapes[0]), bits), 0, None))
    for layer in layers:
        wanted.append((layer.output_region, RegionKind.FEATURE,
                       tensor_bytes(math.prod(layer.out_shape), bits), layer.index, None))
    if mode is Mode.TRAINING:
        for i in range(n):
            fbytes = tensor_bytes(math.prod(shapes[i]), bits)
            wanted.append((f"g{i}", RegionKind.GRADIENT, fbytes, i, f"f{i}"))

    allocator = _FirstFit()
    regions = tuple(
        TensorRegion(rid, kind, allocator.alloc(nbytes), nbytes, idx, paired)
        for rid, kind, nbytes, idx, paired in wanted
    )
    dfg = Dfg(name, bits, mode, tuple(layers), regions)
    dfg.validate()
    return dfg


class _FirstFit:
    """First-fit allocator over a growing address space, chunk aligned."""

    def __init__(self):
        self.holes: list[tuple[int, int]] = []   # (start, end) free ranges
        self.top = 0

    def alloc(self, nbytes: int) -> int:
        span = max(1, -(-nbytes // CHUNK_BYTES)) * CHUNK_BYTES
        for i, (s, e) in enumerate(self.holes):
            if e - s >= span:
                self.holes[i] = (s + span, e)
                return s
        base = self.top
        self.top += span
        return base


def load_network(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# schedules

@dataclass(frozen=True)
class ScheduleStep:
    kind: StepKind
    region: str | None = None
    layer: int = 0
    phase: str = "forward"
    expected_read_ctr: int | None = None
    role: str | None = None

    def __str__(self) -> str:
        if self.kind is StepKind.COMPUTE:
            return "C"
        tag = f"{self.kind.value} {self.region}"
        if self.role == "weight_update":
            tag += "'"
        elif self.role == "loss_grad":
            tag += "(loss grad)"
        return tag


def _forward_steps(dfg: Dfg, epochs: dict[str, int], counter: list[int]) -> list[ScheduleStep]:
    steps = []
    for layer in dfg.layers:
        src = dfg.region(layer.input_region)
        for _ in range(layer.writes):
            steps.append(ScheduleStep(StepKind.READ, src.id, layer.index, "forward",
                                      epochs.get(src.id) if src.kind is RegionKind.FEATURE else None))
            if layer.weight_region:
                steps.append(ScheduleStep(StepKind.READ, layer.weight_region, layer.index))
            steps.append(ScheduleStep(StepKind.COMPUTE, None, layer.index))
            counter[0] += 1
            epochs[layer.output_region] = counter[0]
            steps.append(ScheduleStep(StepKind.WRITE, layer.output_region, layer.index,
                                      "forward", counter[0]))
    return steps


def schedule_inference(dfg: Dfg) -> tuple[ScheduleStep, ...]:
    """Per layer: read input, read weights, compute, write output."""
    if dfg.mode is not Mode.INFERENCE:
        raise ScheduleError("schedule_inference needs an inference graph")
    dfg.validate()
    return tuple(_forward_steps(dfg, {}, [0]))


def schedule_training(dfg: Dfg) -> tuple[ScheduleStep, ...]:
    """Forward pass, then the backward pass in reverse layer order.

    Backward expansion of layer i:
    ``R g_i, R f_{i-1}, R w_i, C, W g_{i-1}, W w_i'``.  The loss is half the
    squared norm of the network output, so the loss gradient g_L is the
    output feature f_L itself and is read from f_L's region.  Gradient steps
    carry the write epoch of their paired feature (the input f0 has none).
    """
    if dfg.mode is not Mode.TRAINING:
        raise ScheduleError("schedule_training needs a training graph")
    dfg.validate()
    epochs: dict[str, int] = {}
    steps = _forward_steps(dfg, epochs, [0])
    for layer in reversed(dfg.layers):
        i = layer.index
        if i == len(dfg.layers):
            steps.append(ScheduleStep(StepKind.READ, layer.output_region, i, "backward",
                                      epochs[layer.output_region], role="loss_grad"))
        else:
            g = dfg.gradient_of(layer.output_region)
            if g is None:
                raise ScheduleError(f"feature {layer.output_region} has no gradient region")
            steps.append(ScheduleStep(StepKind.READ, g, i, "backward", epochs[layer.output_region]))
        src = layer.input_region
        steps.append(ScheduleStep(StepKind.READ, src, i, "backward", epochs.get(src)))
        if layer.weight_region:
            steps.append(ScheduleStep(StepKind.READ, layer.weight_region, i, "backward"))
        steps.append(ScheduleStep(StepKind.COMPUTE, None, i, "backward"))
        g_out = dfg.gradient_of(src)
        if g_out is None:
            raise ScheduleError(f"feature {src} has no gradient region")
        steps.append(ScheduleStep(StepKind.WRITE, g_out, i, "backward", epochs.get(src)))
        if layer.weight_region:
            steps.append(ScheduleStep(StepKind.WRITE, layer.weight_region, i, "backward",
                                      role="weight_update"))
    return tuple(steps)


def schedule(dfg: Dfg) -> tuple[ScheduleStep, ...]:
    return schedule_training(dfg) if dfg.mode is Mode.TRAINING else schedule_inference(dfg)


def compute_groups(steps) -> list[list[ScheduleStep]]:
    """Split a schedule into the step groups executed by one compute instruction."""
    groups, cur, seen_compute = [], [], False
    for st in steps:
        if seen_compute and st.kind is not StepKind.WRITE:
            groups.append(cur)
            cur, seen_compute = [], False
        cur.append(st)
        if st.kind is StepKind.COMPUTE:
            seen_compute = True
    if cur:
        groups.append(cur)
    return groups
