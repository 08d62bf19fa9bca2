import math

import pytest
from hypothesis import given, strategies as st

from guardnn.presets import get_preset
from guardnn.workload import (CHUNK_BYTES, Dfg, LayoutError, Mode, RegionKind, ScheduleError, StepKind,
                              build_network, schedule, schedule_inference, schedule_training, tensor_bytes)


def fc(out, **kw):
    return {"kind": "fc", "out": out, **kw}


def test_first_fit_layout_of_one_layer_mlp():
    # 512 inputs x 8 outputs, no bias: 4 KiB of weights
    dfg = build_network({"input": [512], "layers": [fc(8, bias=False)]})
    addrs = {r.id: r.base_addr for r in dfg.regions}
    assert len(dfg.regions) == 3
    assert addrs == {"w1": 0x0, "f0": 0x1000, "f1": 0x1200}
    assert dfg.region("w1").size_bytes == 4096
    assert dfg.region("f0").span == 512 and dfg.region("f1").span == 512


def test_empty_network():
    dfg = build_network({"input": [4], "layers": []})
    assert dfg.regions == () and dfg.layers == ()
    assert schedule(dfg) == ()
    assert schedule(build_network({"layers": []}, Mode.TRAINING)) == ()


def test_vgg16_regions_and_parameter_count():
    dfg = build_network(get_preset("vgg16"))
    kinds = [r.kind for r in dfg.regions]
    assert kinds.count(RegionKind.WEIGHT) == 16
    assert kinds.count(RegionKind.FEATURE) == 16
    # standard VGG-16 shape table
    chans = [3, 64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
    convs = sum(9 * a * b + b for a, b in zip(chans, chans[1:]))
    fcs = (25088 * 4096 + 4096) + (4096 * 4096 + 4096) + (4096 * 1000 + 1000)
    assert convs + fcs == 138_357_544
    assert sum(l.n_weights for l in dfg.layers) == 138_357_544
    assert sum(r.size_bytes for r in dfg.weight_regions) == 138_357_544


def test_inference_schedule_two_layers():
    dfg = build_network({"input": [64], "layers": [fc(32), fc(16)]})
    assert [str(s) for s in schedule_inference(dfg)] == [
        "R f0", "R w1", "C", "W f1", "R f1", "R w2", "C", "W f2"]


def test_training_schedule_one_layer():
    dfg = build_network({"input": [64], "layers": [fc(16)]}, Mode.TRAINING)
    assert [str(s) for s in schedule_training(dfg)] == [
        "R f0", "R w1", "C", "W f1",
        "R f1(loss grad)", "R f0", "R w1", "C", "W g0", "W w1'"]


def test_backward_visits_layers_in_reverse():
    dfg = build_network({"input": [64], "layers": [fc(32), fc(16)]}, Mode.TRAINING)
    back = [s.layer for s in schedule(dfg) if s.kind is StepKind.COMPUTE and s.phase == "backward"]
    assert back == [2, 1]


def test_schedule_mode_mismatch():
    dfg = build_network({"input": [64], "layers": [fc(16)]})
    with pytest.raises(ScheduleError):
        schedule_training(dfg)


def test_gradient_without_feature_is_rejected():
    dfg = build_network({"input": [64], "layers": [fc(32), fc(16)]}, Mode.TRAINING)
    pruned = Dfg(dfg.name, dfg.bits, dfg.mode, dfg.layers,
                 tuple(r for r in dfg.regions if r.id != "g1"))
    with pytest.raises(ScheduleError):
        schedule_training(pruned)


def test_overlapping_regions_rejected():
    dfg = build_network({"input": [64], "layers": [fc(16)]})
    r0, *rest = dfg.regions
    clash = type(r0)(r0.id + "x", RegionKind.FEATURE, r0.base_addr, r0.size_bytes, 9, None)
    with pytest.raises(LayoutError):
        Dfg(dfg.name, dfg.bits, dfg.mode, dfg.layers, dfg.regions + (clash,)).validate()
    odd = type(r0)("f9", RegionKind.FEATURE, dfg.address_space + 3, 64, 9, None)
    with pytest.raises(LayoutError):
        Dfg(dfg.name, dfg.bits, dfg.mode, dfg.layers, dfg.regions + (odd,)).validate()


def test_tensor_bytes():
    assert tensor_bytes(10, 8) == 10
    assert tensor_bytes(10, 16) == 20
    assert tensor_bytes(4, 6) == 3
    assert tensor_bytes(5, 6) == 4


@st.composite
def networks(draw):
    n_in = draw(st.integers(1, 300))
    outs = draw(st.lists(st.integers(1, 200), min_size=0, max_size=4))
    bits = draw(st.sampled_from([6, 8, 16]))
    return {"input": [n_in], "bits": bits, "layers": [fc(o) for o in outs]}


@given(networks(), st.sampled_from(list(Mode)))
def test_layout_is_aligned_disjoint_and_deterministic(spec, mode):
    a, b = build_network(spec, mode), build_network(spec, mode)
    assert a == b and schedule(a) == schedule(b)
    spans = sorted((r.base_addr, r.base_addr + r.span) for r in a.regions)
    for (s0, e0), (s1, _) in zip(spans, spans[1:]):
        assert e0 <= s1
    assert all(s % CHUNK_BYTES == 0 for s, _ in spans)
    for r in a.regions:
        assert r.span == max(1, math.ceil(r.size_bytes / CHUNK_BYTES)) * CHUNK_BYTES


@given(networks())
def test_training_schedule_shape(spec):
    dfg = build_network(spec, Mode.TRAINING)
    steps = schedule(dfg)
    n = len(dfg.layers)
    assert sum(s.kind is StepKind.COMPUTE for s in steps) == 2 * n
    # every read of a feature is preceded by a write of it
    written = {"f0"}
    for s in steps:
        if s.kind is StepKind.WRITE:
            written.add(s.region)
        elif s.kind is StepKind.READ and s.region.startswith(("f", "g")):
            assert s.region in written
