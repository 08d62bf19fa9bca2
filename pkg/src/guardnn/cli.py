"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import report
from .experiment import ConfigError, ExperimentConfig, config_from_dict, load_config, run_security_suite, run_sweep
from .isa import compile_program
from .perfmodel import SchemeConfig, SimulationError, parse_scheme, run
from .workload import Mode, build_network, schedule

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guardnn", description="Memory protection simulator for DNN accelerators")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="scheme sweep plus the security suite")
    r.add_argument("--jobs", type=int, help="worker processes for the sweep")
    r.add_argument("--emit-traces", action="store_true", help="write per-cell transaction traces")
    r.add_argument("--skip-security", action="store_true", help="only run the traffic sweep")

    sub.add_parser("attack", parents=[common], help="security suite only")

    t = sub.add_parser("trace", parents=[common], help="full transaction trace of one cell")
    t.add_argument("--network", default="mlp-tiny")
    t.add_argument("--mode", default="inference", choices=[m.value for m in Mode])
    t.add_argument("--scheme", default="GuardNN_CI")
    t.add_argument("--functional", action="store_true", help="compute real values, not just traffic")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("seed: must be a non-negative 64-bit integer")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 1:
            raise ConfigError("jobs: must be at least 1")
        cfg.jobs = args.jobs
    if getattr(args, "emit_traces", False):
        cfg.emit_traces = True
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_run(args, cfg: ExperimentConfig) -> int:
    cells = run_sweep(cfg)
    security = None if args.skip_security else run_security_suite(cfg.security, cfg.seed)
    for path in report.write_reports(cfg.out, cfg, cells, security):
        print(path)
    if security is not None and not security["passed"]:
        print("security suite failed", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_attack(args, cfg: ExperimentConfig) -> int:
    security = run_security_suite(cfg.security, cfg.seed)
    out = Path(cfg.out)
    _write(out / "security.json", json.dumps(security, indent=2, sort_keys=True) + "\n")
    _write(out / "security.txt", report.security_text(security))
    sys.stdout.write(report.security_text(security))
    return EXIT_OK if security["passed"] else EXIT_VERIFY


def cmd_trace(args, cfg: ExperimentConfig) -> int:
    try:
        scheme = parse_scheme(args.scheme)
    except ValueError:
        raise ConfigError(f"scheme: unknown scheme {args.scheme!r}") from None
    try:
        spec = cfg.network_spec(args.network)
        dfg = build_network(spec, args.mode)
    except (OSError, json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"network: cannot load {args.network!r}: {exc}") from None
    base = next((s for s in cfg.schemes if s.scheme is scheme), SchemeConfig(scheme))
    steps = schedule(dfg)
    res = run(steps, dfg, base, seed=cfg.seed, functional=args.functional)
    out = Path(cfg.out)
    stem = f"{args.network}_{args.mode}_{scheme.value}"
    _write(out / f"{stem}.transactions.csv", report.expanded_trace_csv(res.trace.bursts))
    records = [json.dumps(ins.to_record(), sort_keys=True) for ins in compile_program(dfg, steps)]
    _write(out / f"{stem}.instructions.jsonl", "\n".join(records) + "\n")
    print(f"{res.traffic.total} transactions, {res.timing.total} cycles")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "attack": cmd_attack, "trace": cmd_trace}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as exc:
        print(f"I/O error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
