"""Command-line front end.

Subcommands mirror the pipeline stages: parse checks and pretty-prints a
kernel, intervals partitions it and reports working sets, renumber applies
the conflict-aware register assignment, simulate runs the timing model
(over a kernel, generating traces, or over a saved trace file), and report
aggregates saved simulate outputs. Every subcommand prints text by
default, JSON with --json, and writes files when --out is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .cfg import IrreducibleCfgError
from .intervals import (
    WorkingSetOverflow,
    build_intervals,
    code_size_bits,
    emit_program,
    prefetch_markers,
)
from .ir import ParseError, format_program, parse_program
from .renumber import (
    BankLayout,
    RegisterSpaceExhausted,
    apply_renumbering,
    interval_conflicts,
    renumber_program,
)
from .rfsim import (
    DESIGNS,
    NonTerminatingPath,
    RegisterFileConfig,
    SimulationDeadlock,
    TraceKnobs,
    generate_traces,
    max_tolerable_latency,
    parse_traces,
    run_sweep,
    simulate,
)

log = logging.getLogger("ltrf.cli")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_STRUCTURE = 2
EXIT_SIMULATION = 3


def _manifest(command: str, args: argparse.Namespace) -> dict:
    skip = {"func", "command"}
    arguments = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in skip and not callable(v)
    }
    return {
        "tool": "ltrf",
        "version": __version__,
        "command": command,
        "arguments": arguments,
    }


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text()


def _emit(doc: dict, args, out_name: str, text_lines: list[str]):
    if args.json:
        print(json.dumps(doc, indent=2))
    else:
        for line in text_lines:
            print(line)
    if getattr(args, "out", None):
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / out_name
        path.write_text(json.dumps(doc, indent=2) + "\n")
        log.info("wrote %s", path)


def _layout(args) -> BankLayout:
    return BankLayout(n_banks=args.banks, mapping=args.bank_map)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_parse(args) -> int:
    program = parse_program(_read_text(args.input))
    doc = {
        "manifest": _manifest("parse", args),
        "input": args.input,
        "instructions": len(program.instructions),
        "labels": dict(sorted(program.labels.items())),
        "predicates": [program.pred_name(i) for i in sorted(program.pred_names)],
    }
    _emit(doc, args, "parse.json", [format_program(program).rstrip("\n")])
    return EXIT_OK


def cmd_intervals(args) -> int:
    program = parse_program(_read_text(args.input))
    icfg = build_intervals(
        program,
        max_regs=args.max_regs_per_interval,
        boundary_mode=args.boundary_mode,
    )
    layout = _layout(args)
    conflicts = interval_conflicts(icfg, layout)
    markers = prefetch_markers(icfg)
    doc = {
        "manifest": _manifest("intervals", args),
        "source": args.input,
        "max_regs": args.max_regs_per_interval,
        "boundary_mode": args.boundary_mode,
        "block_count": len(icfg.cfg.blocks),
        "intervals": [
            {
                "id": itv.id,
                "header": itv.header,
                "blocks": list(itv.blocks),
                "working_set": sorted(r.index for r in itv.working_set),
                "closed": itv.closed,
                "is_call": itv.is_call,
            }
            for itv in icfg.intervals
        ],
        "markers": [
            {
                "instruction": m.instr_index,
                "interval": m.interval_id,
                "working_set_vector": f"{m.working_set_vector:064x}",
                "live_in_vector": f"{m.live_in_vector:064x}",
            }
            for m in markers
        ],
        "conflicts": conflicts,
        "code_size_bits": {
            "embedded": code_size_bits(icfg, "embedded"),
            "explicit": code_size_bits(icfg, "explicit"),
        },
    }
    lines = [
        f"{len(icfg.cfg.blocks)} blocks, {len(icfg.intervals)} intervals "
        f"(budget {args.max_regs_per_interval} registers, "
        f"{args.boundary_mode} boundaries)"
    ]
    for itv, c in zip(icfg.intervals, conflicts):
        regs = ",".join(f"R{r.index}" for r in sorted(itv.working_set))
        lines.append(
            f"  interval {itv.id}: header block {itv.header}, "
            f"blocks {list(itv.blocks)}, registers [{regs}], "
            f"{c} bank conflict{'s' if c != 1 else ''}"
        )
    if args.emit:
        lines = [emit_program(icfg).rstrip("\n")]
    _emit(doc, args, "intervals.json", lines)
    return EXIT_OK


def cmd_renumber(args) -> int:
    program = parse_program(_read_text(args.input))
    layout = _layout(args)
    result = renumber_program(
        program,
        layout,
        max_regs=args.max_regs_per_interval,
        boundary_mode=args.boundary_mode,
    )
    before = interval_conflicts(result.icfg, layout)
    after = interval_conflicts(apply_renumbering(result), layout)
    new_text = format_program(result.program)
    doc = {
        "manifest": _manifest("renumber", args),
        "source": args.input,
        "banks": args.banks,
        "bank_map": args.bank_map,
        "max_regs": args.max_regs_per_interval,
        "ranges": len(result.info.ranges),
        "uncolored": sorted(result.coloring.uncolored),
        "assignment": {str(rid): idx for rid, idx in sorted(result.assignment.items())},
        "conflicts_before": before,
        "conflicts_after": after,
        "program": new_text,
    }
    lines = [
        f"{len(result.info.ranges)} live ranges over {len(result.icfg.intervals)} "
        f"intervals; prefetch conflicts {sum(before)} -> {sum(after)}",
        new_text.rstrip("\n"),
    ]
    _emit(doc, args, "renumber.json", lines)
    if getattr(args, "out", None):
        out = Path(args.out) / "renumbered.s"
        out.write_text(new_text)
        log.info("wrote %s", out)
    return EXIT_OK


def _sniff_trace(text: str) -> bool:
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            return re.match(r"W\d+\s", line) is not None
    return False


def _conf_traces(program, args, knobs):
    """LTRF_CONF simulates the renumbered kernel, walked with the same seed
    so the comparison against the other designs stays paired."""
    result = renumber_program(
        program,
        _layout(args),
        max_regs=args.max_regs_per_interval,
        boundary_mode=args.boundary_mode,
    )
    return generate_traces(apply_renumbering(result), args.warps, knobs, args.seed)


def cmd_simulate(args) -> int:
    text = _read_text(args.input)
    is_trace = _sniff_trace(text)
    knobs = TraceKnobs(
        branch_taken_prob=args.branch_taken_prob,
        max_loop_trips=args.max_loop_trips,
        load_stall_prob=args.load_stall_prob,
        store_stall_prob=args.store_stall_prob,
    )
    traces_by_design: dict[str, dict] = {}
    if is_trace:
        shared = parse_traces(text)
        for design in args.designs:
            traces_by_design[design] = shared
    else:
        program = parse_program(text)
        icfg = build_intervals(
            program,
            max_regs=args.max_regs_per_interval,
            boundary_mode=args.boundary_mode,
        )
        shared = generate_traces(icfg, args.warps, knobs, args.seed)
        for design in args.designs:
            if design == "LTRF_CONF":
                traces_by_design[design] = _conf_traces(program, args, knobs)
            else:
                traces_by_design[design] = shared

    results = []
    tolerable = {}
    for design in args.designs:
        config = RegisterFileConfig(
            design=design,
            main_banks=args.banks,
            bank_map=args.bank_map,
            cache_banks=args.max_regs_per_interval,
            active_warps=args.active_warps,
            total_warps=args.total_warps,
            memory_stall_cycles=args.memory_stall_cycles,
            bank_latency_multiplier=Fraction(args.latency_multiplier),
        )
        traces = traces_by_design[design]
        if args.sweep:
            rows = run_sweep(traces, config)
            tolerable[design] = str(max_tolerable_latency(rows))
        else:
            rows = [(config.bank_latency_multiplier, simulate(traces, config))]
        for mult, res in rows:
            row = res.to_dict()
            row["multiplier"] = str(mult)
            results.append(row)

    doc = {
        "manifest": _manifest("simulate", args),
        "input": args.input,
        "input_kind": "trace" if is_trace else "program",
        "warps": args.warps,
        "seed": args.seed,
        "results": results,
    }
    if tolerable:
        doc["tolerable_latency"] = tolerable

    lines = [
        f"{r['design']:<10} x{r['multiplier']:<5} ipc {r['ipc']:.4f} "
        f"({r['instructions']} instructions / {r['cycles']} cycles)"
        for r in results
    ]
    for design, m in tolerable.items():
        lines.append(f"{design}: tolerable main-file latency x{m}")
    _emit(doc, args, "simulate.json", lines)

    if getattr(args, "out", None):
        csv_path = Path(args.out) / "simulate.csv"
        fields = [
            "design",
            "multiplier",
            "instructions",
            "cycles",
            "ipc",
            "main_rf_accesses",
            "cache_hit_rate",
            "prefetch_count",
            "fetched_registers",
            "written_back_registers",
        ]
        with csv_path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
            writer.writeheader()
            writer.writerows(results)
        log.info("wrote %s", csv_path)
    return EXIT_OK


def cmd_report(args) -> int:
    runs = []
    tolerable = {}
    for path in sorted(Path(args.dir).glob("*.json")):
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError:
            log.warning("skipping unreadable %s", path)
            continue
        manifest = doc.get("manifest", {})
        if manifest.get("tool") != "ltrf" or manifest.get("command") != "simulate":
            continue
        runs.extend(doc.get("results", []))
        tolerable.update(doc.get("tolerable_latency", {}))
    doc = {"manifest": _manifest("report", args), "runs": runs}
    if tolerable:
        doc["tolerable_latency"] = tolerable
    lines = [f"{len(runs)} simulation rows under {args.dir}"]
    for r in sorted(runs, key=lambda r: (r["design"], Fraction(r["multiplier"]))):
        lines.append(
            f"{r['design']:<10} x{r['multiplier']:<5} ipc {r['ipc']:.4f}"
        )
    for design in sorted(tolerable):
        lines.append(f"{design}: tolerable main-file latency x{tolerable[design]}")
    _emit(doc, args, "report.json", lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------


def _add_common_compile_flags(p: argparse.ArgumentParser):
    p.add_argument(
        "--max-regs-per-interval",
        type=int,
        default=16,
        metavar="N",
        help="register budget per interval, and the per-warp cache capacity",
    )
    p.add_argument(
        "--boundary-mode",
        choices=["interval", "strand"],
        default="interval",
        help="where prefetch boundaries may fall",
    )
    p.add_argument("--banks", type=int, default=16, help="main register file banks")
    p.add_argument(
        "--bank-map",
        choices=["mod", "div"],
        default="mod",
        help="register-to-bank mapping of the main file",
    )


def _add_output_flags(p: argparse.ArgumentParser):
    p.add_argument("--json", action="store_true", help="print JSON instead of text")
    p.add_argument("--out", metavar="DIR", help="also write results under DIR")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltrf",
        description="register-interval compiler passes and a register-file "
        "timing simulator",
    )
    parser.add_argument("--version", action="version", version=f"ltrf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a kernel and pretty-print it")
    p.add_argument("input", help="kernel source file, or - for stdin")
    _add_output_flags(p)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("intervals", help="partition a kernel into intervals")
    p.add_argument("input")
    _add_common_compile_flags(p)
    p.add_argument(
        "--emit",
        action="store_true",
        help="print the kernel with .prefetch markers instead of a summary",
    )
    _add_output_flags(p)
    p.set_defaults(func=cmd_intervals)

    p = sub.add_parser("renumber", help="apply conflict-aware register numbers")
    p.add_argument("input")
    _add_common_compile_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_renumber)

    p = sub.add_parser("simulate", help="run the timing model")
    p.add_argument("input", help="kernel source or trace file (lines start with W)")
    _add_common_compile_flags(p)
    p.add_argument(
        "--design",
        dest="designs",
        action="append",
        choices=list(DESIGNS),
        help="design to simulate; repeat for several (default LTRF)",
    )
    p.add_argument("--latency-multiplier", default="1", metavar="M",
                   help="main-file bank latency multiplier, e.g. 1.25 or 5/4")
    p.add_argument("--sweep", action="store_true",
                   help="run the whole latency-multiplier sweep")
    p.add_argument("--warps", type=int, default=8, help="warps to trace")
    p.add_argument("--active-warps", type=int, default=8)
    p.add_argument("--total-warps", type=int, default=64)
    p.add_argument("--memory-stall-cycles", type=int, default=400)
    p.add_argument("--seed", type=int, default=0, help="trace walk seed")
    p.add_argument("--branch-taken-prob", type=float, default=0.5)
    p.add_argument("--max-loop-trips", type=int, default=4)
    p.add_argument("--load-stall-prob", type=float, default=1.0)
    p.add_argument("--store-stall-prob", type=float, default=0.0)
    _add_output_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="aggregate saved simulate outputs")
    p.add_argument("dir", help="directory of simulate JSON files")
    _add_output_flags(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("LTRF_LOG", "WARNING").upper(),
        format="%(name)s: %(message)s",
    )
    args = _parser().parse_args(argv)
    if getattr(args, "designs", "absent") is None:
        args.designs = ["LTRF"]
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (IrreducibleCfgError, WorkingSetOverflow, RegisterSpaceExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURE
    except (SimulationDeadlock, NonTerminatingPath) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
