import pytest
from hypothesis import given, strategies as st

from guardnn.memprot import CounterSnapshot, CounterValue, ProtocolError, SessionExhausted, VersionNumber, VnTag
from guardnn.memprot import vn_for_read, vn_for_write
from guardnn.workload import Mode, RegionKind, build_network

DFG = build_network({"input": [64], "layers": [{"kind": "fc", "out": 32}, {"kind": "fc", "out": 8}]},
                    Mode.TRAINING)


def region(rid):
    return DFG.region(rid)


def test_feature_vn_layout():
    vn = vn_for_write(CounterSnapshot(ctr_in=1, ctr_fw=3), region("f1"))
    assert vn.value == 0x0000000100000003
    assert vn.value >> 62 == 0 and vn.tag is VnTag.FEATURE


def test_weight_vn_is_constant_during_inference():
    state = CounterSnapshot()
    w = region("w1")
    vn = vn_for_write(state, w)
    assert vn == VersionNumber(VnTag.WEIGHT, 0, 0)
    reads = {vn_for_read(rc, w, CounterSnapshot(ctr_in=i, ctr_fw=i)) for i in range(5) for rc in (None, 1, 9)}
    assert reads == {vn}


def test_gradient_shares_its_feature_vn_at_another_address():
    state = CounterSnapshot(ctr_in=1, ctr_fw=3)
    f1, g1 = region("f1"), region("g1")
    assert g1.kind is RegionKind.GRADIENT and g1.paired_feature == "f1"
    assert vn_for_write(state, g1, feature_epoch=3) == vn_for_write(state, f1)
    assert g1.base_addr + g1.span <= f1.base_addr or f1.base_addr + f1.span <= g1.base_addr


def test_input_gradient_uses_input_vn():
    state = CounterSnapshot(ctr_in=2, ctr_fw=5)
    assert vn_for_write(state, region("g0")) == vn_for_write(state, region("f0"))
    assert vn_for_read(None, region("g0"), state, paired_is_input=True) == VersionNumber(VnTag.INPUT, 2, 0)


def test_feature_read_needs_a_read_counter():
    with pytest.raises(ProtocolError):
        vn_for_read(None, region("f1"), CounterSnapshot(ctr_in=1))
    assert vn_for_read(2, region("f1"), CounterSnapshot(ctr_in=1)).epoch == 2


def test_overflow_forces_rekeying():
    with pytest.raises(SessionExhausted):
        vn_for_write(CounterSnapshot(ctr_in=1 << 30), region("f1"))
    with pytest.raises(SessionExhausted):
        vn_for_write(CounterSnapshot(ctr_fw=1 << 32), region("f1"))
    with pytest.raises(SessionExhausted):
        vn_for_write(CounterSnapshot(ctr_w=-1), region("w1"))


def test_counter_value_bytes():
    assert CounterValue(0x10, 0x0102).to_bytes() == bytes(7) + b"\x10" + bytes(6) + b"\x01\x02"


vns = st.builds(VersionNumber, st.sampled_from(list(VnTag)), st.integers(0, 2**30 - 1), st.integers(0, 2**32 - 1))


@given(vns)
def test_value_round_trip(vn):
    assert VersionNumber.from_value(vn.value) == vn
    assert 0 <= vn.value < 2**64


@given(vns, vns)
def test_distinct_vns_have_distinct_values(a, b):
    assert (a == b) == (a.value == b.value)
