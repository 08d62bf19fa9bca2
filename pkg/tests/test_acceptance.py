"""Acceptance suite: one test per criterion, summarised at the end of the run."""
import time
from array import array
from collections import defaultdict

import numpy as np
import pytest

from guardnn import experiment, harness, report
from guardnn.experiment import config_from_dict, run_security_suite, run_sweep
from guardnn.memprot import KeystreamAudit, KeystreamReuseError
from guardnn.perfmodel import SCHEME_ORDER, mac_oracle, run, slowdown
from guardnn.presets import get_preset
from guardnn.workload import Mode, StepKind, build_network, compute_groups, schedule

SCHEMES = [s.value for s in SCHEME_ORDER]


@pytest.fixture
def criterion(request):
    def note(n, title, detail=""):
        request.node.user_properties.append(("criterion", n))
        request.node.user_properties.append(("title", title))
        request.node.user_properties.append(("detail", detail))
    return note


class ClaimRecorder:
    """Independent keystream-uniqueness check: sort all claims, look for overlap."""

    def __init__(self):
        self.claims = defaultdict(lambda: (array("Q"), array("Q"), array("Q")))
        self.checked = 0
        self.duplicates = 0
        self.blocks = 0

    def record(self, audit, key, vn, start, end):
        vns, starts, ends = self.claims[(id(audit), key)]
        vns.append(vn), starts.append(start), ends.append(end)

    def settle(self):
        for vns, starts, ends in self.claims.values():
            v, s, e = (np.frombuffer(a, dtype=np.uint64) for a in (vns, starts, ends))
            order = np.lexsort((s, v))
            v, s, e = v[order], s[order], e[order]
            same = v[1:] == v[:-1]
            self.duplicates += int(np.count_nonzero(same & (s[1:] < e[:-1])))
            self.checked += len(v)
            self.blocks += int(((e - s) // 16).sum())
        self.claims.clear()


@pytest.fixture(scope="session")
def sweep():
    """The default sweep, run once with the claim recorder attached."""
    rec = ClaimRecorder()
    real_claim, real_run = KeystreamAudit.claim, experiment.run
    per_cell = []

    def claim(self, key, vn, start, end):
        real_claim(self, key, vn, start, end)
        rec.record(self, key, vn, start, end)

    def traced_run(*args, **kwargs):
        res = real_run(*args, **kwargs)
        before = rec.duplicates, rec.blocks
        rec.settle()
        per_cell.append((rec.duplicates - before[0], rec.blocks - before[1], res.accelerator.audit.blocks))
        return res

    cfg = config_from_dict({})
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(KeystreamAudit, "claim", claim)
        mp.setattr(experiment, "run", traced_run)
        t0 = time.perf_counter()
        cells = run_sweep(cfg)
        elapsed = time.perf_counter() - t0
    return {"cfg": cfg, "cells": cells, "claims": per_cell, "recorder": rec, "elapsed": elapsed}


def rows(sweep, **match):
    return [c for c in sweep["cells"] if all(getattr(c, k) == v for k, v in match.items())]


# 1 -----------------------------------------------------------------------------

def test_criterion_01_round_trip(criterion):
    criterion(1, "round trip, 1000 random inference sessions per scheme")
    rng = np.random.default_rng(2024)
    nets = [harness.random_network(rng) for _ in range(1000)]
    t0 = time.perf_counter()
    failures = defaultdict(int)
    for scheme in SCHEMES:
        for i, net in enumerate(nets):
            r = harness.honest_session(net, scheme, seed=i, mode=Mode.INFERENCE)
            ok = r.output_ok and (r.attested if scheme in ("GuardNN_CI", "BP") else r.sign_rejected)
            failures[scheme] += not ok
    elapsed = time.perf_counter() - t0
    criterion(1, "round trip, 1000 random inference sessions per scheme",
              f"failures {dict(failures)}, {elapsed:.1f}s")
    assert sum(failures.values()) == 0
    assert elapsed < 60


# 2 -----------------------------------------------------------------------------

def test_criterion_02_zero_vn_traffic(sweep, criterion):
    cells = [c for c in sweep["cells"] if c.scheme.startswith("GuardNN")]
    worst = max(c.counts["Vn"] + c.counts["Tree"] for c in cells)
    criterion(2, "GuardNN runs move no VN or tree metadata", f"{len(cells)} cells, max Vn+Tree = {worst}")
    assert len(cells) == 16 and worst == 0


# 3 -----------------------------------------------------------------------------

def per_pass_oracle(dfg):
    """MAC transactions per compute instruction from the MAC layout alone."""
    out = []
    for group in compute_groups(schedule(dfg)):
        comp = next(s for s in group if s.kind is StepKind.COMPUTE)
        passes = [s for s in group if s.kind is not StepKind.COMPUTE]
        out.append((comp.phase, comp.layer, sum(-(-dfg.region(s.region).n_chunks * 8 // 64) for s in passes)))
    return out


def test_criterion_03_traffic_ratios(sweep, criterion):
    lines = []
    for net in ("vgg16", "mlp-tiny"):
        for mode in Mode:
            dfg = build_network(get_preset(net), mode)
            c, ci, bp = (rows(sweep, network=net, mode=mode.value, scheme=s)[0]
                         for s in ("GuardNN_C", "GuardNN_CI", "BP"))
            assert c.traffic_increase == 1.0
            assert 1.0156 <= ci.traffic_increase <= 1.032
            assert [(p, l, n["Mac"]) for p, l, n in ci.layer_counts] == per_pass_oracle(dfg)
            assert ci.counts["Mac"] == mac_oracle(dfg, schedule(dfg))
            assert 1.15 <= bp.traffic_increase <= 1.60
            lines.append(f"{net}/{mode.value} CI {ci.traffic_increase:.4f} BP {bp.traffic_increase:.4f}")
    for net_mode in {(c.network, c.mode) for c in sweep["cells"]}:
        ci = rows(sweep, network=net_mode[0], mode=net_mode[1], scheme="GuardNN_CI")[0]
        bp = rows(sweep, network=net_mode[0], mode=net_mode[1], scheme="BP")[0]
        assert bp.traffic_increase >= ci.traffic_increase
    criterion(3, "traffic ratios", "; ".join(lines))


# 4 -----------------------------------------------------------------------------

def test_criterion_04_slowdown_ordering(sweep, criterion):
    worst_ci = 0.0
    for net, mode in {(c.network, c.mode) for c in sweep["cells"]}:
        cyc = [rows(sweep, network=net, mode=mode, scheme=s)[0].cycles for s in SCHEMES]
        assert cyc == sorted(cyc), (net, mode, cyc)
        ci = rows(sweep, network=net, mode=mode, scheme="GuardNN_CI")[0]
        if ci.memory_bound:
            worst_ci = max(worst_ci, ci.slowdown)
            assert ci.slowdown <= 1.05
    # a dense conv whose arithmetic intensity exceeds the machine balance
    spec = {"name": "dense-conv", "input": [512, 112, 112],
            "layers": [{"kind": "conv", "out": 512, "kernel": 3, "stride": 1, "pad": 1}]}
    dfg = build_network(spec)
    steps = schedule(dfg)
    np_run, ci_run = run(steps, dfg, "NP"), run(steps, dfg, "GuardNN_CI")
    assert np_run.timing.compute > np_run.timing.memory
    cb = slowdown(ci_run.timing, np_run.timing)
    criterion(4, "slowdown ordering", f"worst memory-bound CI {worst_ci:.4f}, compute-bound CI {cb:.4f}")
    assert cb <= 1.005


# 5 -----------------------------------------------------------------------------

def test_criterion_05_tamper_and_replay(criterion):
    misses, leaks, crashes, counts = [], 0, 0, defaultdict(int)
    whens = ("input", "weight", "feature")

    def check(o, expect_detect):
        nonlocal leaks, crashes
        counts[o.scheme] += 1
        leaks += o.leaked
        crashes += o.crashed
        if expect_detect and o.detected is not True:
            misses.append((o.kind, o.scheme, o.seed, o.detail))

    # random ciphertext bit flips
    for scheme in ("GuardNN_CI", "BP", "GuardNN_C"):
        for t in range(1000):
            o = harness.tamper_attack(scheme, "ciphertext", t, whens[t % 3])
            check(o, scheme != "GuardNN_C")
    # every metadata structure and tree level
    dfg = build_network(harness.ATTACK_NETWORK)
    from guardnn.memprot import BaselineMemory
    levels = BaselineMemory(dfg.address_space, functional=False).levels
    for when in whens:
        for seed in range(5):
            check(harness.tamper_attack("GuardNN_CI", "mac", seed, when), True)
            check(harness.tamper_attack("BP", "mac", seed, when), True)
            check(harness.tamper_attack("BP", "vn", seed, when), True)
            for level in range(1, levels):
                check(harness.tamper_attack("BP", "tree", seed, when, level=level), True)
    # every generated replay interleaving
    n_replays = 0
    for scheme in ("GuardNN_CI", "BP", "GuardNN_C"):
        for kind, parts in harness.replay_corpus(scheme):
            for seed in range(3):
                check(harness.replay_attack(scheme, kind, parts, seed), scheme != "GuardNN_C")
                n_replays += 1
    criterion(5, "tamper and replay completeness",
              f"{sum(counts.values())} attacks ({n_replays} replays, tree levels 0..{levels - 1}), "
              f"misses {len(misses)}, leaks {leaks}, crashes {crashes}")
    assert not misses and leaks == 0 and crashes == 0


# 6 -----------------------------------------------------------------------------

def test_criterion_06_confidentiality_fuzz(criterion):
    t0 = time.perf_counter()
    outcomes = [harness.fuzz_host(("GuardNN_C", "GuardNN_CI", "BP")[i % 3], i, 10_000) for i in range(10)]
    elapsed = time.perf_counter() - t0
    leaked = sum(o.leaked for o in outcomes)
    crashed = sum(o.crashed for o in outcomes)
    criterion(6, "confidentiality fuzz, 10 x 10000 instructions",
              f"leaks {leaked}, crashes {crashed}, {elapsed:.1f}s")
    assert leaked == 0 and crashed == 0 and elapsed < 300


# 7 -----------------------------------------------------------------------------

def test_criterion_07_data_independent_traces(criterion):
    checked = 0
    cases = [(n, Mode.INFERENCE) for n in ("mlp-tiny", "alexnet", "vgg16", "resnet50")]
    cases.append(("mlp-tiny", Mode.TRAINING))
    for net, mode in cases:
        dfg = build_network(get_preset(net), mode)
        steps = schedule(dfg)
        for scheme in SCHEMES:
            a = run(steps, dfg, scheme, functional=True, data_seed=11)
            b = run(steps, dfg, scheme, functional=True, data_seed=12)
            assert a.trace.bursts == b.trace.bursts, (net, scheme)
            assert a.timing.total == b.timing.total
            checked += 1
            del a, b
    criterion(7, "data-independent traces", f"{checked} (network, scheme) pairs identical")


# 8 -----------------------------------------------------------------------------

def test_criterion_08_attestation(criterion):
    result = {}
    for kind in harness.DIVERGENCES:
        trials = [harness.attestation_trial(kind, seed) for seed in range(100)]
        result[kind] = (sum(h for h, _ in trials), sum(not d for _, d in trials))
    criterion(8, "attestation discrimination",
              ", ".join(f"{k} {h}/{f}" for k, (h, f) in result.items()))
    assert all(v == (100, 100) for v in result.values())


# 9 -----------------------------------------------------------------------------

def test_criterion_09_keystream_uniqueness(sweep, criterion):
    rec = sweep["recorder"]
    dups = sum(d for d, _, _ in sweep["claims"])
    assert all(b == blocks for _, b, blocks in sweep["claims"])
    protected = [c for c in sweep["cells"] if c.scheme != "NP"]
    assert all(c.blocks_encrypted > 0 for c in protected)
    assert any(c.mode == "training" for c in protected)
    criterion(9, "keystream uniqueness audit",
              f"{rec.checked} claims, {rec.blocks} blocks, duplicates {dups}")
    assert dups == 0
    # the independent check is not vacuous
    probe = ClaimRecorder()
    probe.record(None, "k", 5, 0, 512)
    probe.record(None, "k", 5, 256, 768)
    probe.settle()
    assert probe.duplicates == 1
    with pytest.raises(KeystreamReuseError):
        audit = KeystreamAudit()
        audit.claim("k", 5, 0, 512)
        audit.claim("k", 5, 256, 768)


# 10 ----------------------------------------------------------------------------

def test_criterion_10_reproducibility(sweep, tmp_path, criterion):
    cfg = sweep["cfg"]
    security = run_security_suite(cfg.security, cfg.seed)
    first = report.write_reports(tmp_path / "a", cfg, sweep["cells"], security)
    again = config_from_dict({})
    second = report.write_reports(tmp_path / "b", again, run_sweep(again),
                                  run_security_suite(again.security, again.seed))
    names = [p.name for p in first]
    assert names == [p.name for p in second]
    same = [a.read_bytes() == b.read_bytes() for a, b in zip(first, second)]
    n_rows = len((tmp_path / "a" / "results.csv").read_text().splitlines()) - 1
    criterion(10, "reproducible reports", f"{sum(same)}/{len(same)} files identical, {n_rows} rows")
    assert all(same) and n_rows == 32
    assert security["passed"]
