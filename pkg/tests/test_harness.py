import numpy as np
import pytest

from guardnn import harness
from guardnn.presets import get_preset
from guardnn.workload import Mode

INTEGRITY = ("GuardNN_CI", "BP")


@pytest.mark.parametrize("scheme", ["NP", "GuardNN_C", "GuardNN_CI", "BP"])
@pytest.mark.parametrize("mode", ["inference", "training"])
def test_honest_sessions(scheme, mode):
    r = harness.honest_session(get_preset("mlp-tiny"), scheme, seed=1, mode=mode, markers=3)
    assert r.output_ok
    if scheme in INTEGRITY:
        assert r.attested is True and not r.sign_rejected
    else:
        assert r.attested is None and r.sign_rejected
    # only the unprotected device leaks: that is the positive control for the scanner
    assert r.leaked is (scheme == "NP")


def test_honest_session_is_deterministic():
    a = harness.honest_session(get_preset("mlp-tiny"), "GuardNN_CI", seed=4, markers=1)
    b = harness.honest_session(get_preset("mlp-tiny"), "GuardNN_CI", seed=4, markers=1)
    assert a == b


def test_markers_are_planted():
    from guardnn.workload import build_network
    dfg = build_network(harness.ATTACK_NETWORK)
    model = harness.make_model(dfg, np.random.default_rng(0), 2)
    blob = model.weight_plaintext() + model.input_plaintext()
    assert model.markers and all(m in blob for m in model.markers)
    assert all(len(m) == harness.MARKER_BYTES for m in model.markers)


@pytest.mark.parametrize("when", ["input", "weight", "feature"])
def test_ciphertext_flip(when):
    assert harness.tamper_attack("GuardNN_CI", "ciphertext", 0, when).detected is True
    assert harness.tamper_attack("BP", "ciphertext", 0, when).detected is True
    c = harness.tamper_attack("GuardNN_C", "ciphertext", 0, when)
    assert c.detected is None and not c.leaked


@pytest.mark.parametrize("target", ["mac", "vn", "tree"])
def test_metadata_tamper(target):
    o = harness.tamper_attack("BP", target, 3, "feature")
    assert o.detected and not o.leaked and not o.crashed
    if target == "mac":
        assert harness.tamper_attack("GuardNN_CI", "mac", 3, "feature").detected


@pytest.mark.parametrize("scheme", ["GuardNN_C", "GuardNN_CI", "BP"])
def test_replays(scheme):
    for kind, parts in harness.replay_corpus(scheme):
        o = harness.replay_attack(scheme, kind, parts, 0)
        assert not o.leaked and not o.crashed
        if scheme in INTEGRITY:
            assert o.detected, (kind, parts)


def test_same_epoch_replay_is_not_a_replay():
    for scheme in ("GuardNN_CI", "BP"):
        o = harness.replay_attack(scheme, "same_epoch", ("data", "mac"), 0)
        assert not o.detected and not o.leaked


def test_wrong_read_ctr():
    assert harness.wrong_read_ctr("GuardNN_CI", 1).detected
    c = harness.wrong_read_ctr("GuardNN_C", 1)
    assert not c.leaked and c.detected is None
    for scheme in ("GuardNN_C", "GuardNN_CI", "BP"):
        assert not harness.wrong_read_ctr(scheme, 0).detected


@pytest.mark.parametrize("kind", harness.DIVERGENCES)
def test_attestation_trial(kind):
    assert harness.attestation_trial(kind, 0) == (True, False)


def test_fuzz_small_campaign():
    o = harness.fuzz_host("GuardNN_CI", 0, 1500)
    assert not o.leaked and not o.crashed


def test_fuzz_positive_control():
    # without protection the scanner must find the planted markers
    assert harness.fuzz_host("NP", 0, 1500).leaked


def test_random_network_builds():
    from guardnn.workload import build_network, schedule
    rng = np.random.default_rng(0)
    for _ in range(20):
        spec = harness.random_network(rng)
        for mode in Mode:
            schedule(build_network(spec, mode))
