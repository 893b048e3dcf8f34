"""Bank-aware register renumbering.

Prefetching a working set whose registers pile into few banks serializes on
the bank ports, so after interval formation each live range is recolored to
a bank and given a fresh register from that bank's pool. Ranges that share
an interval working set interfere; the interference graph is colored with
one color per bank using the classic simplify / optimistic-push / select
scheme, balancing bank occupancy on ties. Ranges the coloring cannot place
fall back to the bank that adds the fewest working-set collisions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .cfg import (
    Cfg,
    Liveness,
    LiveRangeInfo,
    compute_live_ranges,
    compute_liveness,
)
from .intervals import IntervalCfg, build_intervals
from .ir import GENERAL, REG_COUNT, LtrfError, Program, Register

DEFAULT_BANKS = 16
BANK_MAPS = ("mod", "div")


class RegisterSpaceExhausted(LtrfError):
    """No register can legally hold another simultaneously-held range."""


# ---------------------------------------------------------------------------
# Bank layout and conflict counting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BankLayout:
    """How architectural register numbers map onto physical banks.

    mod striping interleaves consecutive registers across banks; div slices
    the register file into contiguous runs of registers_per_bank.
    """

    n_banks: int = DEFAULT_BANKS
    mapping: str = "mod"
    total: int = REG_COUNT

    def __post_init__(self):
        if self.mapping not in BANK_MAPS:
            raise ValueError(f"mapping must be one of {BANK_MAPS}")
        if self.n_banks < 1 or self.total < self.n_banks:
            raise ValueError("need at least one register per bank")
        if self.total % self.n_banks != 0:
            raise ValueError("total registers must divide evenly into banks")

    @property
    def registers_per_bank(self) -> int:
        return self.total // self.n_banks

    def bank_of(self, index: int) -> int:
        if self.mapping == "mod":
            return index % self.n_banks
        return index // self.registers_per_bank

    def bank_registers(self, bank: int) -> list[int]:
        if self.mapping == "mod":
            return list(range(bank, self.total, self.n_banks))
        rpb = self.registers_per_bank
        return list(range(bank * rpb, (bank + 1) * rpb))


def count_bank_conflicts(indices, layout: BankLayout) -> int:
    """Extra access rounds a single-cycle fetch of these registers needs.

    The fetch is limited by the most-loaded bank: k registers in one bank
    take k rounds, so the conflict count is max-per-bank minus one, never
    negative, and zero for an empty set.
    """
    per_bank: dict[int, int] = {}
    for idx in set(indices):
        b = layout.bank_of(idx)
        per_bank[b] = per_bank.get(b, 0) + 1
    return max(per_bank.values(), default=1) - 1


def interval_conflicts(icfg: IntervalCfg, layout: BankLayout) -> list[int]:
    """Bank conflicts of each interval's working-set prefetch, by id."""
    return [
        count_bank_conflicts({r.index for r in itv.working_set}, layout)
        for itv in icfg.intervals
    ]


# ---------------------------------------------------------------------------
# Range annotation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RangeAnnotation:
    """Interval membership of one live range.

    site_intervals hold a definition or use; live_intervals adds the
    intervals the value only crosses. Prefetch traffic (and therefore bank
    interference) follows sites; reuse legality follows liveness.
    """

    site_intervals: frozenset[int]
    live_intervals: frozenset[int]


def annotate_live_ranges(
    icfg: IntervalCfg,
    info: LiveRangeInfo | None = None,
    liveness: Liveness | None = None,
) -> tuple[LiveRangeInfo, list[RangeAnnotation]]:
    cfg = icfg.cfg
    if info is None:
        info = compute_live_ranges(cfg.program, cfg)
    if liveness is None:
        liveness = compute_liveness(cfg)

    n = len(info.ranges)
    sites: list[set[int]] = [set() for _ in range(n)]
    for i, rid in info.def_range.items():
        sites[rid].add(icfg.block_to_interval[cfg.block_of[i]])
    for (i, _pos), rid in info.use_range.items():
        sites[rid].add(icfg.block_to_interval[cfg.block_of[i]])

    live: list[set[int]] = [set(s) for s in sites]
    for itv in icfg.intervals:
        hdr = itv.header
        for r in liveness.live_in[hdr]:
            if r.kind != GENERAL:
                continue
            for rid in info.reach_in_ranges[hdr].get(r, ()):
                for b in itv.blocks:
                    if (
                        r in liveness.live_out[b]
                        and rid in info.reach_out_ranges[b].get(r, ())
                    ):
                        live[rid].add(itv.id)
                        break

    annotations = [
        RangeAnnotation(frozenset(sites[i]), frozenset(live[i])) for i in range(n)
    ]
    return info, annotations


def build_icg(annotations: list[RangeAnnotation]) -> list[set[int]]:
    """Interference adjacency: ranges prefetched by a common interval."""
    by_interval: dict[int, list[int]] = {}
    for rid, ann in enumerate(annotations):
        for iid in ann.site_intervals:
            by_interval.setdefault(iid, []).append(rid)
    adj: list[set[int]] = [set() for _ in annotations]
    for members in by_interval.values():
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                if a != b:
                    adj[a].add(b)
                    adj[b].add(a)
    return adj


# ---------------------------------------------------------------------------
# Coloring
# ---------------------------------------------------------------------------


@dataclass
class ColoringResult:
    colors: dict[int, int]
    uncolored: list[int]


def color_icg(adjacency: list[set[int]], n_colors: int) -> ColoringResult:
    """Chaitin-style graph coloring with balanced color selection.

    Simplify removes the highest-numbered node of degree below n_colors;
    when none qualifies the highest-degree node is pushed optimistically.
    Select assigns each popped node the least-used permitted color (lowest
    id on ties) or records it as uncolored, never miscoloring.
    """
    n = len(adjacency)
    removed = [False] * n
    degree = [len(adjacency[i]) for i in range(n)]
    stack: list[int] = []
    for _ in range(n):
        pick = None
        for i in range(n):
            if not removed[i] and degree[i] < n_colors:
                pick = i
        if pick is None:
            for i in range(n):
                if not removed[i] and (
                    pick is None or (degree[i], i) >= (degree[pick], pick)
                ):
                    pick = i
        removed[pick] = True
        for j in adjacency[pick]:
            if not removed[j]:
                degree[j] -= 1
        stack.append(pick)

    colors: dict[int, int] = {}
    uncolored: list[int] = []
    usage = [0] * n_colors
    for node in reversed(stack):
        banned = {colors[j] for j in adjacency[node] if j in colors}
        allowed = [c for c in range(n_colors) if c not in banned]
        if not allowed:
            uncolored.append(node)
            continue
        c = min(allowed, key=lambda c: (usage[c], c))
        colors[node] = c
        usage[c] += 1
    uncolored.sort()
    return ColoringResult(colors, uncolored)


# ---------------------------------------------------------------------------
# Register assignment and program rewrite
# ---------------------------------------------------------------------------


def assign_registers(
    info: LiveRangeInfo,
    annotations: list[RangeAnnotation],
    coloring: ColoringResult,
    layout: BankLayout,
) -> dict[int, int]:
    """Pick a fresh register per range, ascending range id.

    Colored ranges draw from their color's bank; uncolored ranges (and
    colored ones whose bank ran dry) go to the free bank that adds the
    fewest shared-interval collisions. When every register is taken, a
    register may be shared by ranges whose live intervals are disjoint,
    except ranges still carrying a kernel-entry value, which must keep
    exclusive storage.
    """
    pools: list[list[int]] = [layout.bank_registers(b) for b in range(layout.n_banks)]
    members: list[list[int]] = [[] for _ in range(layout.n_banks)]
    holders: dict[int, list[int]] = {}
    assignment: dict[int, int] = {}

    def collision_score(rid: int, bank: int) -> int:
        mine = annotations[rid].site_intervals
        return sum(
            len(mine & annotations[other].site_intervals) for other in members[bank]
        )

    for rng in info.ranges:
        rid = rng.id
        color = coloring.colors.get(rid)
        bank = None
        if color is not None and pools[color]:
            bank = color
        else:
            free = [b for b in range(layout.n_banks) if pools[b]]
            if free:
                bank = min(free, key=lambda b: (collision_score(rid, b), b))
        if bank is not None:
            new = pools[bank].pop(0)
            assignment[rid] = new
            members[bank].append(rid)
            holders.setdefault(new, []).append(rid)
            continue

        if rng.has_entry_def:
            raise RegisterSpaceExhausted(
                f"no free register for range {rid}, which carries an entry value"
            )
        mine = annotations[rid].live_intervals
        for candidate in sorted(holders):
            held = holders[candidate]
            if any(info.ranges[h].has_entry_def for h in held):
                continue
            if all(
                not (annotations[h].live_intervals & mine) for h in held
            ):
                assignment[rid] = candidate
                members[layout.bank_of(candidate)].append(rid)
                holders[candidate].append(rid)
                break
        else:
            raise RegisterSpaceExhausted(
                f"range {rid} of {rng.reg} overlaps every allocated register"
            )
    return assignment


def rewrite_program(
    program: Program, cfg: Cfg, info: LiveRangeInfo, assignment: dict[int, int]
) -> Program:
    """Apply a range assignment; unreachable instructions pass through."""
    new_instrs = []
    for i, instr in enumerate(program.instructions):
        if i not in cfg.block_of:
            new_instrs.append(replace(instr))
            continue
        dest = instr.dest
        if dest is not None and dest.kind == GENERAL:
            dest = Register(GENERAL, assignment[info.def_range[i]])
        srcs = list(instr.srcs)
        for pos, _r in instr.general_srcs():
            srcs[pos] = Register(GENERAL, assignment[info.use_range[(i, pos)]])
        new_instrs.append(
            replace(instr, dest=dest, srcs=tuple(srcs), dead_srcs=None)
        )
    return Program(new_instrs, dict(program.labels), dict(program.pred_names))


@dataclass
class RenumberResult:
    program: Program  # rewritten
    icfg: IntervalCfg  # partition of the original program
    info: LiveRangeInfo
    annotations: list[RangeAnnotation]
    coloring: ColoringResult
    assignment: dict[int, int]
    layout: BankLayout

    def entry_register_map(self) -> dict[int, int]:
        """original register index -> new index, for kernel-entry values."""
        return {
            r.reg.index: self.assignment[r.id]
            for r in self.info.ranges
            if r.has_entry_def
        }


def renumber_program(
    program: Program,
    layout: BankLayout | None = None,
    *,
    max_regs: int = 16,
    boundary_mode: str = "interval",
) -> RenumberResult:
    """Whole pipeline: intervals, ranges, coloring, assignment, rewrite."""
    layout = layout or BankLayout()
    icfg = build_intervals(program, max_regs=max_regs, boundary_mode=boundary_mode)
    info, annotations = annotate_live_ranges(icfg)
    coloring = color_icg(build_icg(annotations), layout.n_banks)
    assignment = assign_registers(info, annotations, coloring, layout)
    new_program = rewrite_program(program, icfg.cfg, info, assignment)
    return RenumberResult(
        new_program, icfg, info, annotations, coloring, assignment, layout
    )


def apply_renumbering(result: RenumberResult) -> IntervalCfg:
    """The original partition re-read over the renumbered program.

    Block boundaries and edges are unchanged by renaming, so the blocks are
    copied structurally and only the working sets are recomputed.
    """
    old = result.icfg
    blocks = [
        replace(b, succs=list(b.succs), preds=list(b.preds)) for b in old.cfg.blocks
    ]
    cfg = Cfg(result.program, blocks, dict(old.cfg.block_of))
    intervals = []
    for itv in old.intervals:
        ws: set[Register] = set()
        for b in itv.blocks:
            ws |= cfg.block_general_registers(b)
        intervals.append(replace(itv, working_set=frozenset(ws)))
    return IntervalCfg(
        cfg, intervals, dict(old.block_to_interval), old.max_regs, old.boundary_mode
    )
