"""Report files for a sweep: table, summary, header, security results and traces."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from pathlib import Path

from . import crypto
from .experiment import CellResult, ExperimentConfig
from .memprot import TX_BYTES as LINE, Purpose

COLUMNS = ("network", "mode", "scheme", "data_tx", "mac_tx", "vn_tx", "tree_tx", "total_tx",
           "traffic_increase", "cycles", "slowdown", "memory_bound")
FORMAT_VERSION = 1


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def results_csv(cells: list[CellResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for c in cells:
        row = c.row()
        w.writerow([_fmt(row[k]) for k in COLUMNS])
    return buf.getvalue()


def results_json(cells: list[CellResult]) -> str:
    return json.dumps([c.row() for c in cells], indent=2, sort_keys=True) + "\n"


def summary_text(cells: list[CellResult]) -> str:
    """Per-scheme averages, split by mode and overall."""
    groups: dict[tuple[str, str], list[CellResult]] = defaultdict(list)
    order: list[str] = []
    for c in cells:
        groups[(c.mode, c.scheme)].append(c)
        groups[("all", c.scheme)].append(c)
        if c.scheme not in order:
            order.append(c.scheme)
    modes = sorted({c.mode for c in cells}) + ["all"]
    lines = [f"{'mode':<10} {'scheme':<11} {'cells':>5} {'traffic_increase':>17} {'slowdown':>9}"]
    for mode in modes:
        for scheme in order:
            g = groups.get((mode, scheme))
            if not g:
                continue
            ti = sum(c.traffic_increase for c in g) / len(g)
            sd = sum(c.slowdown for c in g) / len(g)
            lines.append(f"{mode:<10} {scheme:<11} {len(g):>5} {ti:>17.4f} {sd:>9.4f}")
    bound = sum(c.memory_bound for c in cells if c.scheme == order[0]) if order else 0
    lines.append("")
    lines.append(f"memory-bound cells: {bound} of {len({(c.network, c.mode) for c in cells})}")
    return "\n".join(lines) + "\n"


def header(cfg: ExperimentConfig) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "seed": cfg.seed,
        "algorithms": dict(crypto.ALGORITHMS),
        "geometry": {"transaction_bytes": LINE, "chunk_bytes": 512, "block_bytes": 16,
                     "vn_layout": "tag:2 | primary:30 | epoch:32"},
        "networks": list(cfg.networks),
        "modes": [m.value for m in cfg.modes],
        "schemes": [s.to_dict() for s in cfg.schemes],
        "security": cfg.security.to_dict(),
        "timing": "per instruction max(ceil(macs/compute_rate), "
                  "ceil(tx*64/bandwidth) + ceil(stall)); backward counts 2x macs",
        "conventions": {
            "sign_output": "digests are cumulative over the session at the time of the call",
            "measured_window": "compute instructions only; imports excluded, metadata cache cold at start",
        },
    }


def security_text(sec: dict) -> str:
    lines = [f"{'PASS' if ok else 'FAIL'}  {name}" for name, ok in sec["checks"].items()]
    lines.append("")
    lines.append(f"scenarios run: {len(sec['outcomes'])}")
    return "\n".join(lines) + "\n"


def trace_csv(bursts) -> str:
    """Burst-coalesced trace: seq is the first transaction of a run of ``count`` lines."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("seq", "purpose", "addr", "count", "rw"))
    seq = 0
    for purpose, addr, count, write in bursts:
        p = purpose.value if isinstance(purpose, Purpose) else str(purpose)
        w.writerow((seq, p, addr, count, "W" if write else "R"))
        seq += count
    return buf.getvalue()


def expanded_trace_csv(bursts) -> str:
    """One record per 64 B transaction."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("seq", "purpose", "addr", "rw"))
    seq = 0
    for purpose, addr, count, write in bursts:
        p = purpose.value if isinstance(purpose, Purpose) else str(purpose)
        rw = "W" if write else "R"
        for i in range(count):
            w.writerow((seq, p, addr + i * LINE, rw))
            seq += 1
    return buf.getvalue()


def write_reports(out: str | Path, cfg: ExperimentConfig, cells: list[CellResult],
                  security: dict | None) -> list[Path]:
    """Write every report file; raises OSError with the offending path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "results.csv": results_csv(cells),
        "results.json": results_json(cells),
        "summary.txt": summary_text(cells),
        "header.json": json.dumps(header(cfg), indent=2, sort_keys=True) + "\n",
    }
    if security is not None:
        files["security.json"] = json.dumps(security, indent=2, sort_keys=True) + "\n"
        files["security.txt"] = security_text(security)
    written = []
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        written.append(path)
    if cfg.emit_traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for c in cells:
            if c.trace_bursts is None:
                continue
            path = tdir / f"{c.network}_{c.mode}_{c.scheme}.csv"
            path.write_text(trace_csv(c.trace_bursts))
            written.append(path)
    return written
