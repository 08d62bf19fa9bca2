"""Experiment configuration, the scheme sweep and the security suite."""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from . import harness
from .perfmodel import (SCHEME_ORDER, Scheme, SchemeConfig, SimulationError, memory_bound, parse_scheme,
                        run, slowdown, traffic_increase)
from .presets import get_preset
from .workload import Mode, build_network, load_network, schedule

DEFAULT_NETWORKS = ("mlp-tiny", "alexnet", "vgg16", "resnet50")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SecurityConfig:
    tamper_trials: int = 20          # random bit flips per (scheme, target)
    fuzz_campaigns: int = 1          # per scheme
    fuzz_instructions: int = 2000
    attestation_trials: int = 10     # per divergence kind

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ExperimentConfig:
    networks: list[str] = field(default_factory=lambda: list(DEFAULT_NETWORKS))
    modes: list[Mode] = field(default_factory=lambda: [Mode.INFERENCE, Mode.TRAINING])
    schemes: list[SchemeConfig] = field(default_factory=lambda: [SchemeConfig(s) for s in SCHEME_ORDER])
    seed: int = 0
    out: str = "results"
    emit_traces: bool = False
    jobs: int = 1
    security: SecurityConfig = field(default_factory=SecurityConfig)
    base_dir: str = "."

    def to_dict(self) -> dict:
        return {"networks": list(self.networks), "modes": [m.value for m in self.modes],
                "schemes": [s.to_dict() for s in self.schemes], "seed": self.seed,
                "emit_traces": self.emit_traces, "security": self.security.to_dict()}

    def network_spec(self, name: str) -> dict:
        try:
            return get_preset(name)
        except KeyError:
            pass
        path = Path(name)
        if not path.is_absolute():
            path = Path(self.base_dir) / path
        return load_network(path)


_TOP_KEYS = {"networks", "modes", "schemes", "seed", "out", "emit_traces", "jobs", "security"}
_SCHEME_KEYS = {f.name for f in fields(SchemeConfig)}


def _int(value: Any, where: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{where}: expected an integer >= {minimum}, got {value!r}")
    return value


def config_from_dict(raw: Any, base_dir: str = ".") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object at the top level")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown config field")
    cfg = ExperimentConfig(base_dir=base_dir)
    if "networks" in raw:
        nets = raw["networks"]
        if not isinstance(nets, list) or not nets or not all(isinstance(n, str) for n in nets):
            raise ConfigError("networks: expected a non-empty list of names or paths")
        cfg.networks = list(nets)
    if "modes" in raw:
        modes = raw["modes"]
        if not isinstance(modes, list) or not modes:
            raise ConfigError("modes: expected a non-empty list")
        try:
            cfg.modes = [Mode(m) for m in modes]
        except ValueError:
            bad = next(m for m in modes if m not in [x.value for x in Mode])
            raise ConfigError(f"modes: unknown mode {bad!r}") from None
    if "schemes" in raw:
        schemes = raw["schemes"]
        if not isinstance(schemes, list) or not schemes:
            raise ConfigError("schemes: expected a non-empty list")
        cfg.schemes = [_scheme(s, f"schemes[{i}]") for i, s in enumerate(schemes)]
    if "seed" in raw:
        cfg.seed = _int(raw["seed"], "seed")
        if cfg.seed >= 2**64:
            raise ConfigError("seed: must fit in 64 bits")
    if "out" in raw:
        if not isinstance(raw["out"], str):
            raise ConfigError("out: expected a path")
        cfg.out = raw["out"]
    if "emit_traces" in raw:
        if not isinstance(raw["emit_traces"], bool):
            raise ConfigError("emit_traces: expected true or false")
        cfg.emit_traces = raw["emit_traces"]
    if "jobs" in raw:
        cfg.jobs = _int(raw["jobs"], "jobs", 1)
    if "security" in raw:
        sec = raw["security"]
        if not isinstance(sec, dict):
            raise ConfigError("security: expected an object")
        allowed = {f.name for f in fields(SecurityConfig)}
        for k, v in sec.items():
            if k not in allowed:
                raise ConfigError(f"security.{k}: unknown field")
            _int(v, f"security.{k}")
        cfg.security = SecurityConfig(**sec)
    for i, name in enumerate(cfg.networks):
        try:
            spec = cfg.network_spec(name)
            build_network(spec, Mode.INFERENCE)
        except (OSError, json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"networks[{i}]: cannot load {name!r}: {exc}") from None
    return cfg


def _scheme(entry: Any, where: str) -> SchemeConfig:
    if isinstance(entry, str):
        entry = {"scheme": entry}
    if not isinstance(entry, dict) or "scheme" not in entry:
        raise ConfigError(f"{where}: expected a scheme name or an object with a 'scheme' field")
    for k in entry:
        if k not in _SCHEME_KEYS:
            raise ConfigError(f"{where}.{k}: unknown field")
    try:
        parse_scheme(entry["scheme"])
    except ValueError:
        raise ConfigError(f"{where}.scheme: unknown scheme {entry['scheme']!r}") from None
    try:
        return SchemeConfig(**entry)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(raw, str(Path(path).parent))


# -- sweep ------------------------------------------------------------------------

@dataclass
class CellResult:
    network: str
    mode: str
    scheme: str
    counts: dict[str, int]
    traffic_increase: float
    cycles: int
    slowdown: float
    memory_bound: bool
    blocks_encrypted: int
    layer_counts: list[tuple[str, int, dict[str, int]]] = field(default_factory=list)
    trace_bursts: list | None = None

    @property
    def total_tx(self) -> int:
        return sum(self.counts.values())

    def row(self) -> dict:
        return {"network": self.network, "mode": self.mode, "scheme": self.scheme,
                "data_tx": self.counts["Data"], "mac_tx": self.counts["Mac"],
                "vn_tx": self.counts["Vn"], "tree_tx": self.counts["Tree"],
                "total_tx": self.total_tx, "traffic_increase": self.traffic_increase,
                "cycles": self.cycles, "slowdown": self.slowdown,
                "memory_bound": self.memory_bound}


def _run_group(args) -> list[CellResult]:
    """All schemes of one (network, mode) pair; NP always runs as the reference."""
    name, spec, mode, schemes, seed, keep_trace = args
    dfg = build_network(spec, mode)
    steps = schedule(dfg)
    base = schemes[0] if schemes else SchemeConfig(Scheme.NP)
    ref = run(steps, dfg, base.with_scheme(Scheme.NP), seed=seed)
    out = []
    for cfg in schemes:
        res = ref if cfg == base.with_scheme(Scheme.NP) else run(steps, dfg, cfg, seed=seed)
        out.append(CellResult(
            name, mode.value, cfg.scheme.value,
            {p.value: n for p, n in res.traffic.totals.items()},
            traffic_increase(res.traffic, ref.traffic), res.timing.total,
            slowdown(res.timing, ref.timing), memory_bound(ref.timing),
            res.accelerator.audit.blocks,
            [(l.phase, l.layer, {p.value: n for p, n in l.counts.items()}) for l in res.traffic.layers],
            list(res.trace.bursts) if keep_trace else None))
    return out


def run_sweep(cfg: ExperimentConfig) -> list[CellResult]:
    """Every (network, mode, scheme) cell, ordered by configuration order."""
    groups = [(name, cfg.network_spec(name), mode, list(cfg.schemes), cfg.seed, cfg.emit_traces)
              for name in cfg.networks for mode in cfg.modes]
    if cfg.jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_group, groups))
    else:
        results = [_run_group(g) for g in groups]
    return [cell for group in results for cell in group]


# -- security suite ---------------------------------------------------------------

INTEGRITY_SCHEMES = (Scheme.GUARDNN_CI, Scheme.BP)
PROTECTED_SCHEMES = (Scheme.GUARDNN_C, Scheme.GUARDNN_CI, Scheme.BP)


def _targets(scheme: Scheme) -> list[str]:
    if scheme is Scheme.GUARDNN_C:
        return ["ciphertext"]
    if scheme is Scheme.GUARDNN_CI:
        return ["ciphertext", "mac"]
    return list(harness.TAMPER_TARGETS)


def run_security_suite(cfg: SecurityConfig, seed: int = 0) -> dict:
    """Harness scenarios with pass/fail per check; deterministic in ``seed``."""
    outcomes: list[dict] = []
    checks: dict[str, bool] = {}

    honest_ok = True
    for scheme in SCHEME_ORDER:
        r = harness.honest_session(get_preset("mlp-tiny"), scheme.value, seed, markers=2)
        good = r.output_ok and (r.attested if r.attested is not None else r.sign_rejected)
        honest_ok &= bool(good)
        outcomes.append({"kind": "honest", "scheme": scheme.value, "passed": bool(good),
                         "transcript": r.transcript})
    checks["honest sessions verify"] = honest_ok

    tamper_ok = True
    for scheme in PROTECTED_SCHEMES:
        for target in _targets(scheme):
            for t in range(cfg.tamper_trials):
                when = ("input", "weight", "feature")[t % 3]
                o = harness.tamper_attack(scheme.value, target, seed * 100_003 + t, when)
                tamper_ok &= _good(o)
                outcomes.append(o.to_dict())
        if scheme is Scheme.BP:
            mem_levels = _baseline_levels()
            for level in range(1, mem_levels):
                o = harness.tamper_attack(scheme.value, "tree", seed + level, "feature", level=level)
                tamper_ok &= _good(o)
                outcomes.append(o.to_dict())
    checks["tamper detected, nothing leaked"] = tamper_ok

    replay_ok = True
    for scheme in PROTECTED_SCHEMES:
        for kind, parts in harness.replay_corpus(scheme.value):
            o = harness.replay_attack(scheme.value, kind, parts, seed)
            replay_ok &= _good(o)
            outcomes.append(o.to_dict())
        o = harness.replay_attack(scheme.value, "same_epoch", ("data", "mac"), seed)
        replay_ok &= o.detected in (None, False) and not o.leaked
        outcomes.append(o.to_dict())
    checks["replays detected, nothing leaked"] = replay_ok

    rc_ok = True
    for scheme in PROTECTED_SCHEMES:
        for delta in (0, 1):
            o = harness.wrong_read_ctr(scheme.value, delta, seed)
            if delta == 0:
                rc_ok &= o.detected in (None, False) and not o.leaked
            else:
                rc_ok &= _good(o)
            outcomes.append(o.to_dict())
    checks["wrong read counters harmless"] = rc_ok

    fuzz_ok = True
    for scheme in PROTECTED_SCHEMES:
        for c in range(cfg.fuzz_campaigns):
            o = harness.fuzz_host(scheme.value, seed * 1000 + c, cfg.fuzz_instructions)
            fuzz_ok &= not o.leaked and not o.crashed
            outcomes.append(o.to_dict())
    checks["fuzzing leaks nothing and never crashes"] = fuzz_ok

    att_ok = True
    for kind in harness.DIVERGENCES:
        passes = fails = 0
        for t in range(cfg.attestation_trials):
            honest, divergent = harness.attestation_trial(kind, seed * 10_007 + t)
            passes += honest
            fails += not divergent
        att_ok &= passes == fails == cfg.attestation_trials
        outcomes.append({"kind": f"attestation/{kind}", "honest_pass": passes,
                         "divergent_fail": fails, "trials": cfg.attestation_trials})
    checks["attestation discriminates"] = att_ok
    return {"checks": checks, "passed": all(checks.values()), "outcomes": outcomes}


def _good(o: harness.AttackOutcome) -> bool:
    return not o.leaked and not o.crashed and o.detected in (None, True)


def _baseline_levels() -> int:
    from .memprot import BaselineMemory
    dfg = build_network(harness.ATTACK_NETWORK, Mode.INFERENCE)
    return BaselineMemory(dfg.address_space, functional=False).levels


__all__ = ["CellResult", "ConfigError", "ExperimentConfig", "SecurityConfig", "SimulationError",
           "config_from_dict", "load_config", "run_security_suite", "run_sweep"]
