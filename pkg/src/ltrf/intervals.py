"""Register-interval formation.

A register interval is a single-entry group of basic blocks whose combined
register demand fits the register cache, so one prefetch at the interval
boundary covers every access inside it. Formation runs in two passes:

* pass 1 (form_intervals) grows an interval from each header block,
  absorbing a block when all of its predecessors are already inside and the
  merged working set still fits;
* pass 2 (merge_intervals) repeats the same growth over the graph of
  intervals until nothing merges, which folds inner loops into enclosing
  ones when the budget allows.

Blocks are pre-split so that every call sits alone (calls clobber the cache
and always form their own closed interval) and, in strand boundary mode,
after every memory operation. A block whose own instructions need more than
the budget is split greedily first, mirroring the header-overflow cut.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction

from .cfg import Cfg, build_cfg, check_reducible, compute_liveness
from .ir import (
    BRA,
    CALL,
    GENERAL,
    LD_LOCAL,
    ST_LOCAL,
    LtrfError,
    Program,
    Register,
    format_program,
)

BOUNDARY_MODES = ("interval", "strand")


class WorkingSetOverflow(LtrfError):
    """A single instruction names more registers than the interval budget."""


@dataclass(frozen=True)
class Interval:
    id: int
    header: int  # block id
    blocks: tuple[int, ...]
    working_set: frozenset[Register]
    closed: bool
    is_call: bool


@dataclass
class IntervalCfg:
    """A CFG partitioned into register intervals."""

    cfg: Cfg
    intervals: list[Interval]
    block_to_interval: dict[int, int]
    max_regs: int
    boundary_mode: str

    @property
    def program(self) -> Program:
        return self.cfg.program

    def interval_of_instruction(self, index: int) -> int | None:
        bid = self.cfg.block_of.get(index)
        return None if bid is None else self.block_to_interval[bid]


# ---------------------------------------------------------------------------
# Pass 1
# ---------------------------------------------------------------------------


def _forced_leaders(program: Program, boundary_mode: str) -> set[int]:
    extra: set[int] = set()
    for i, instr in enumerate(program.instructions):
        if instr.opcode == CALL:
            extra.add(i)
            extra.add(i + 1)
        elif boundary_mode == "strand" and instr.opcode in (LD_LOCAL, ST_LOCAL):
            extra.add(i + 1)
    return extra


def _demand_splits(program: Program, cfg: Cfg, max_regs: int) -> set[int]:
    """Cut points for blocks whose own running register set overflows."""
    cuts: set[int] = set()
    for b in cfg.blocks:
        regs: set[Register] = set()
        for i in b.instruction_range():
            need = set(program.instructions[i].general_registers())
            if len(need) > max_regs:
                raise WorkingSetOverflow(
                    f"instruction {i} alone names {len(need)} registers, "
                    f"budget is {max_regs}"
                )
            if len(regs | need) > max_regs:
                cuts.add(i)
                regs = need
            else:
                regs |= need
    return cuts


def _block_closes(program: Program, cfg: Cfg, block_id: int, boundary_mode: str) -> bool:
    """In strand mode an interval stops growing past a memory operation or
    a backward branch; in interval mode only calls close anything."""
    if boundary_mode != "strand":
        return False
    b = cfg.blocks[block_id]
    last = program.instructions[b.end - 1]
    if last.opcode in (LD_LOCAL, ST_LOCAL):
        return True
    if last.opcode == BRA and program.labels[last.target] <= b.end - 1:
        return True
    return False


def form_intervals(
    program: Program, *, max_regs: int = 16, boundary_mode: str = "interval"
) -> IntervalCfg:
    """First interval pass: partition the CFG into register intervals.

    Raises IrreducibleCfgError on irreducible control flow and
    WorkingSetOverflow when one instruction cannot fit the budget at all.
    """
    if boundary_mode not in BOUNDARY_MODES:
        raise ValueError(f"boundary_mode must be one of {BOUNDARY_MODES}")
    forced = _forced_leaders(program, boundary_mode)
    cfg = build_cfg(program, forced)
    check_reducible(cfg)
    cuts = _demand_splits(program, cfg, max_regs)
    if cuts:
        # splitting straight-line runs cannot make the graph irreducible
        cfg = build_cfg(program, forced | cuts)

    block_regs = [cfg.block_general_registers(b.id) for b in cfg.blocks]
    is_call_block = [
        any(program.instructions[i].opcode == CALL for i in b.instruction_range())
        for b in cfg.blocks
    ]

    records: list[dict] = []
    assigned: dict[int, int] = {}
    work: deque[int] = deque()

    def new_interval(header: int) -> None:
        iid = len(records)
        records.append(
            {
                "header": header,
                "blocks": [header],
                "ws": set(block_regs[header]),
                "closed": is_call_block[header]
                or _block_closes(program, cfg, header, boundary_mode),
                "is_call": is_call_block[header],
            }
        )
        assigned[header] = iid
        work.append(iid)

    if cfg.blocks:
        new_interval(0)
    while work:
        iid = work.popleft()
        itv = records[iid]
        while not itv["closed"]:
            joined = False
            for b in cfg.blocks:
                h = b.id
                if h in assigned or is_call_block[h] or not b.preds:
                    continue
                if not all(assigned.get(p) == iid for p in b.preds):
                    continue
                if len(itv["ws"] | block_regs[h]) > max_regs:
                    continue
                itv["blocks"].append(h)
                itv["ws"] |= block_regs[h]
                assigned[h] = iid
                if _block_closes(program, cfg, h, boundary_mode):
                    itv["closed"] = True
                joined = True
                break
            if not joined:
                break
        for h in sorted(itv["blocks"]):
            for s in sorted(cfg.blocks[h].succs):
                if s not in assigned:
                    new_interval(s)

    assert len(assigned) == len(cfg.blocks), "interval pass left blocks behind"
    intervals = [
        Interval(
            id=i,
            header=rec["header"],
            blocks=tuple(sorted(rec["blocks"])),
            working_set=frozenset(rec["ws"]),
            closed=rec["closed"],
            is_call=rec["is_call"],
        )
        for i, rec in enumerate(records)
    ]
    return IntervalCfg(cfg, intervals, dict(assigned), max_regs, boundary_mode)


# ---------------------------------------------------------------------------
# Pass 2
# ---------------------------------------------------------------------------


def _merge_once(icfg: IntervalCfg) -> tuple[IntervalCfg, bool]:
    cfg = icfg.cfg
    itvs = icfg.intervals
    n = len(itvs)
    if n == 0:
        return icfg, False
    b2i = icfg.block_to_interval

    preds: list[set[int]] = [set() for _ in range(n)]
    succs: list[set[int]] = [set() for _ in range(n)]
    for b in cfg.blocks:
        for s in b.succs:
            a, c = b2i[b.id], b2i[s]
            if a != c:
                succs[a].add(c)
                preds[c].add(a)

    groups: list[dict] = []
    grouped: dict[int, int] = {}
    work: deque[int] = deque()

    def new_group(seed: int) -> None:
        gid = len(groups)
        groups.append(
            {
                "seed": seed,
                "members": [seed],
                "ws": set(itvs[seed].working_set),
                "closed": itvs[seed].closed,
                "is_call": itvs[seed].is_call,
            }
        )
        grouped[seed] = gid
        work.append(gid)

    new_group(b2i[0])
    while work:
        gid = work.popleft()
        grp = groups[gid]
        while not grp["closed"]:
            joined = False
            for h in range(n):
                if h in grouped or itvs[h].is_call or not preds[h]:
                    continue
                if not all(grouped.get(p) == gid for p in preds[h]):
                    continue
                if len(grp["ws"] | itvs[h].working_set) > icfg.max_regs:
                    continue
                grp["members"].append(h)
                grp["ws"] |= itvs[h].working_set
                grp["closed"] = grp["closed"] or itvs[h].closed
                grouped[h] = gid
                joined = True
                break
            if not joined:
                break
        for m in sorted(grp["members"]):
            for s in sorted(succs[m]):
                if s not in grouped:
                    new_group(s)

    assert len(grouped) == n, "interval merge left intervals behind"
    if all(len(g["members"]) == 1 for g in groups):
        return icfg, False

    intervals = []
    b2i_new: dict[int, int] = {}
    for gid, g in enumerate(groups):
        blocks: list[int] = []
        ws: set[Register] = set()
        for m in g["members"]:
            blocks.extend(itvs[m].blocks)
            ws |= itvs[m].working_set
        intervals.append(
            Interval(
                id=gid,
                header=itvs[g["seed"]].header,
                blocks=tuple(sorted(blocks)),
                working_set=frozenset(ws),
                closed=g["closed"],
                is_call=g["is_call"],
            )
        )
        for b in intervals[-1].blocks:
            b2i_new[b] = gid
    merged = IntervalCfg(cfg, intervals, b2i_new, icfg.max_regs, icfg.boundary_mode)
    return merged, True


def merge_intervals(icfg: IntervalCfg) -> IntervalCfg:
    """Second interval pass, repeated until no pair of intervals merges."""
    while True:
        icfg, changed = _merge_once(icfg)
        if not changed:
            return icfg


def build_intervals(
    program: Program, *, max_regs: int = 16, boundary_mode: str = "interval"
) -> IntervalCfg:
    """Both passes back to back."""
    return merge_intervals(
        form_intervals(program, max_regs=max_regs, boundary_mode=boundary_mode)
    )


# ---------------------------------------------------------------------------
# Prefetch markers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrefetchMarker:
    """A prefetch point at the first instruction of an interval header.

    Vectors are 256-bit integers, bit i standing for general register Ri:
    working_set_vector gates what the cache loads, live_in_vector narrows
    that to values that can still be read before being rewritten.
    """

    instr_index: int
    interval_id: int
    working_set_vector: int
    live_in_vector: int


def _vector(regs) -> int:
    v = 0
    for r in regs:
        if r.kind == GENERAL:
            v |= 1 << r.index
    return v


def prefetch_markers(icfg: IntervalCfg) -> list[PrefetchMarker]:
    liveness = compute_liveness(icfg.cfg)
    markers = [
        PrefetchMarker(
            instr_index=icfg.cfg.blocks[itv.header].start,
            interval_id=itv.id,
            working_set_vector=_vector(itv.working_set),
            live_in_vector=_vector(liveness.live_in[itv.header])
            & _vector(itv.working_set),
        )
        for itv in icfg.intervals
    ]
    markers.sort(key=lambda m: m.instr_index)
    return markers


def emit_program(icfg: IntervalCfg, mode: str = "embedded") -> str:
    """Render the program with a .prefetch marker ahead of each header."""
    if mode not in ("embedded", "explicit"):
        raise ValueError("mode must be 'embedded' or 'explicit'")
    annotations: dict[int, list[str]] = {}
    for m in prefetch_markers(icfg):
        annotations.setdefault(m.instr_index, []).append(
            f".prefetch 0x{m.working_set_vector:064x}"
        )
    return format_program(icfg.program, annotations)


def instruction_count(icfg: IntervalCfg, mode: str = "embedded") -> int:
    """Embedded markers ride along as a flag bit; explicit ones are real
    instructions in the stream."""
    base = len(icfg.program.instructions)
    if mode == "explicit":
        return base + len(icfg.intervals)
    return base


def code_size_bits(icfg: IntervalCfg, mode: str = "embedded") -> int:
    """Static code size: 64-bit instruction words, plus either one marker
    bit per instruction and a 256-bit vector per interval (embedded) or a
    whole extra instruction plus vector per interval (explicit)."""
    n = len(icfg.program.instructions)
    k = len(icfg.intervals)
    base = 64 * n
    if mode == "explicit":
        return base + k * (64 + 256)
    return base + n + k * 256


# ---------------------------------------------------------------------------
# Dynamic interval-length statistics
# ---------------------------------------------------------------------------


def _length_stats(lengths: list[int]) -> dict:
    total = sum(lengths)
    return {
        "count": len(lengths),
        "total_instructions": total,
        "mean": Fraction(total, len(lengths)) if lengths else Fraction(0),
        "max": max(lengths, default=0),
    }


def interval_length_stats(events) -> dict:
    """Instructions executed between interval boundaries in one warp's trace.

    Works on anything with .kind: exec events count, interval_enter events
    cut, everything else passes through.
    """
    lengths: list[int] = []
    run = 0
    for ev in events:
        if ev.kind == "exec":
            run += 1
        elif ev.kind == "interval_enter":
            if run:
                lengths.append(run)
            run = 0
    if run:
        lengths.append(run)
    return _length_stats(lengths)


def optimal_interval_length(events, max_regs: int) -> dict:
    """Longest boundaries any placement could have achieved for this trace.

    Greedy maximal segmentation of the executed instructions: extend the
    current segment until one more instruction would push the touched
    register set past max_regs. Greedy is optimal here because any prefix
    of a valid segment is valid, so it is a lower bound on the number of
    boundaries and an upper bound on the mean length.
    """
    lengths: list[int] = []
    seg_regs: set[int] = set()
    run = 0
    for ev in events:
        if ev.kind != "exec":
            continue
        need = set(ev.reads) | set(ev.writes)
        assert len(need) <= max_regs, "instruction wider than the register budget"
        if len(seg_regs | need) > max_regs:
            lengths.append(run)
            seg_regs = need
            run = 1
        else:
            seg_regs |= need
            run += 1
    if run:
        lengths.append(run)
    return _length_stats(lengths)
