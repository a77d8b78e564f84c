"""Command line entry point: simulate, certify, observability, sweep, plots.

Exit codes: 0 pass, 1 fail, 2 undecidable, 3 configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigurationError, DelayDampError, SimulationRefused
from .observability import observability_table
from .scenario import MAX_CERT_MODES

EXIT_PASS, EXIT_FAIL, EXIT_UNDECIDABLE, EXIT_CONFIG = 0, 1, 2, 3


def _out(args, sc, key, default) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / sc.output.get(key, default)


def cmd_simulate(args) -> int:
    from .scenario import build_scenario, load_config, metadata_line, run_trace, summarize, trace_csv

    sc = build_scenario(load_config(args.config))
    tr = run_trace(sc)
    meta = None if args.no_metadata else metadata_line(args.config)
    _out(args, sc, "trace", "trace.csv").write_text(trace_csv(tr, meta))
    summary = summarize(sc, tr)
    _out(args, sc, "summary", "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"E_S(0)={summary['E_S_initial']:.10g}  E_S(end)={summary['E_S_final']:.10g}  samples={summary['samples']}")
    return EXIT_PASS


def cmd_certify(args) -> int:
    from .scenario import build_scenario, certificate_for, load_config, metadata_line, run_trace, summarize, trace_csv

    sc = build_scenario(load_config(args.config))
    tr = run_trace(sc)
    rep = certificate_for(sc, tr)
    meta = None if args.no_metadata else metadata_line(args.config)
    _out(args, sc, "trace", "trace.csv").write_text(trace_csv(tr, meta))
    _out(args, sc, "summary", "summary.json").write_text(json.dumps(summarize(sc, tr), indent=2, sort_keys=True) + "\n")
    _out(args, sc, "report", "report.json").write_text(rep.to_json() + "\n")
    print(rep.to_table())
    return rep.exit_code


def cmd_observability(args) -> int:
    from .observability import truncation_check
    from .scenario import build_scenario, load_config

    sc = build_scenario(load_config(args.config))
    times = sc.certify.get("observability_times") or [float(sc.schedule.T_even.min())]
    system = sc.system
    K = sc.certify.get("K", system.K if sc.model == "MODAL" else min(system.K, MAX_CERT_MODES))
    if K < system.K:
        system = system.truncate(K)
    lines = ["T,c"] + [f"{T:.17g},{c:.17g}" for T, c in observability_table(system, times)]
    text = "\n".join(lines) + "\n"
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(args.out_dir) / "observability.csv").write_text(text)
    sys.stdout.write(text)
    if system.K > 1 and all(c != float("inf") for _, c in observability_table(system, times[:1])):
        tc = truncation_check(system, times[0])
        if tc.flagged:
            print(f"warning: c changed by {tc.rel_change:.1%} between {system.K // 2} and {system.K} modes", file=sys.stderr)
    return EXIT_PASS


def cmd_sweep(args) -> int:
    from .scenario import load_config, run_sweep, sweep_csv, worker_count

    cfg = load_config(args.config)
    if "sweep" not in cfg:
        raise ConfigurationError("config has no sweep section")
    rows = run_sweep(cfg, worker_count(args.workers))
    names = list(cfg["sweep"]["grid"])
    text = sweep_csv(rows, names)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(args.out_dir) / "sweep.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_FAIL if any(r["verdict"] == "ERROR" for r in rows) else EXIT_PASS


def cmd_plots(args) -> int:
    from .scenario import emit_plots

    trace = Path(args.trace) if args.trace else Path(args.out_dir) / "trace.csv"
    for p in emit_plots(trace, args.out_dir, args.summary):
        print(p)
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delaydamp", description="Switched delayed-damping simulator and certificate checker.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out-dir", default=".", help="directory for outputs")
        p.add_argument("--no-metadata", action="store_true", help="omit the metadata header line in CSV output")
        p.add_argument("--workers", type=int, default=None, help="parallel workers (default: $DELAYDAMP_WORKERS or 1)")

    common(sub.add_parser("simulate", help="integrate a scenario and write the energy trace"))
    common(sub.add_parser("certify", help="simulate and check every certified bound"))
    common(sub.add_parser("observability", help="tabulate the observability constant"))
    common(sub.add_parser("sweep", help="certify a grid of scenarios"))
    p = sub.add_parser("plots", help="write plotting scripts for a trace")
    common(p, config=False)
    p.add_argument("--trace", help="trace CSV (default: OUT_DIR/trace.csv)")
    p.add_argument("--summary", help="summary JSON (default: next to the trace)")
    return ap


COMMANDS = {
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "observability": cmd_observability,
    "sweep": cmd_sweep,
    "plots": cmd_plots,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SimulationRefused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        print(json.dumps(exc.report.to_dict(), indent=2), file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DelayDampError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
