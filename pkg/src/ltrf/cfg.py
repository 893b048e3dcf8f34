"""Control-flow graph construction and dataflow analyses.

Everything downstream (interval formation, register renumbering, trace
generation) works on the block graph built here. The analyses are the
classic iterative ones: dominators as bitsets, backward liveness over
general and predicate registers, and reaching definitions whose def-use
webs become live ranges.

Guarded instructions are handled conservatively throughout: a guarded
write may not happen, so the destination counts as a use as well as a
(non-killing) definition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .ir import (
    BRA,
    EXIT,
    GENERAL,
    Instruction,
    LtrfError,
    Program,
    Register,
)

log = logging.getLogger("ltrf.cfg")

# Reaching-definition site index standing for "the value the register held
# on kernel entry". Real sites are instruction indices.
ENTRY_SITE = -1


class IrreducibleCfgError(LtrfError):
    """A retreating edge whose target does not dominate its source."""

    def __init__(self, src_block: int, dst_block: int):
        super().__init__(
            f"irreducible control flow: retreating edge from block "
            f"{src_block} to block {dst_block} is not a dominated back edge"
        )
        self.src_block = src_block
        self.dst_block = dst_block


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------


@dataclass
class BasicBlock:
    id: int
    start: int
    end: int  # exclusive instruction index
    succs: list[int] = field(default_factory=list)
    preds: list[int] = field(default_factory=list)

    def instruction_range(self) -> range:
        return range(self.start, self.end)


@dataclass
class Cfg:
    program: Program
    blocks: list[BasicBlock]
    block_of: dict[int, int]  # instruction index -> block id, reachable only

    def entry(self) -> BasicBlock:
        return self.blocks[0]

    def instructions(self, block_id: int) -> list[Instruction]:
        b = self.blocks[block_id]
        return self.program.instructions[b.start : b.end]

    def block_general_registers(self, block_id: int) -> set[Register]:
        """All general registers named by the block's instructions."""
        regs: set[Register] = set()
        for instr in self.instructions(block_id):
            regs.update(instr.general_registers())
        return regs


def _successor_indices(program: Program, last: int, end: int) -> list[int]:
    """Successor instruction indices of a block whose last instruction is
    at index `last` and whose fallthrough would be `end`."""
    n = len(program.instructions)
    instr = program.instructions[last]
    succs: list[int] = []
    if instr.opcode == BRA:
        t = program.labels[instr.target]
        if t < n:  # a branch to a trailing label just ends the kernel
            succs.append(t)
        if instr.guard is not None and end < n:
            succs.append(end)
    elif instr.opcode == EXIT:
        if instr.guard is not None and end < n:
            succs.append(end)
    else:
        if end < n:
            succs.append(end)
    return succs


def build_cfg(program: Program, extra_leaders: set[int] | None = None) -> Cfg:
    """Split a program into basic blocks and wire up edges.

    Leaders are the entry, every branch target, and the instruction after a
    terminator; extra_leaders forces additional splits (used to isolate
    calls and, in strand mode, to cut after memory operations). Blocks that
    cannot be reached from the entry are dropped with a warning.
    """
    n = len(program.instructions)
    if n == 0:
        return Cfg(program, [], {})

    leaders = {0}
    for i, instr in enumerate(program.instructions):
        if instr.opcode == BRA:
            leaders.add(program.labels[instr.target])
        if instr.is_terminator() and i + 1 < n:
            leaders.add(i + 1)
    for i in extra_leaders or ():
        if 0 < i < n:
            leaders.add(i)
    leaders.discard(n)

    starts = sorted(leaders)
    bounds = list(zip(starts, starts[1:] + [n]))
    start_to_pos = {s: i for i, (s, _) in enumerate(bounds)}

    succ_lists = [
        _successor_indices(program, e - 1, e) for (s, e) in bounds
    ]

    # Reachability over block positions.
    reachable = {0}
    stack = [0]
    while stack:
        pos = stack.pop()
        for tgt in succ_lists[pos]:
            tpos = start_to_pos[tgt]
            if tpos not in reachable:
                reachable.add(tpos)
                stack.append(tpos)
    if len(reachable) < len(bounds):
        dropped = [bounds[i] for i in range(len(bounds)) if i not in reachable]
        log.warning(
            "dropping %d unreachable block(s): %s",
            len(dropped),
            ", ".join(f"[{s},{e})" for s, e in dropped),
        )

    kept = [i for i in range(len(bounds)) if i in reachable]
    new_id = {pos: i for i, pos in enumerate(kept)}
    blocks = [
        BasicBlock(id=new_id[pos], start=bounds[pos][0], end=bounds[pos][1])
        for pos in kept
    ]
    for pos in kept:
        b = blocks[new_id[pos]]
        for tgt in succ_lists[pos]:
            b.succs.append(new_id[start_to_pos[tgt]])
    for b in blocks:
        for s in b.succs:
            blocks[s].preds.append(b.id)

    block_of = {}
    for b in blocks:
        for i in b.instruction_range():
            block_of[i] = b.id
    return Cfg(program, blocks, block_of)


# ---------------------------------------------------------------------------
# Dominators and reducibility
# ---------------------------------------------------------------------------


def dominator_sets(cfg: Cfg) -> list[set[int]]:
    """Dominator set per block, iterative bitset fixpoint."""
    nb = len(cfg.blocks)
    if nb == 0:
        return []
    full = (1 << nb) - 1
    dom = [full] * nb
    dom[0] = 1
    changed = True
    while changed:
        changed = False
        for b in cfg.blocks[1:]:
            mask = full
            for p in b.preds:
                mask &= dom[p]
            mask |= 1 << b.id
            if mask != dom[b.id]:
                dom[b.id] = mask
                changed = True
    return [{i for i in range(nb) if d >> i & 1} for d in dom]


def check_reducible(cfg: Cfg, doms: list[set[int]] | None = None) -> None:
    """Raise IrreducibleCfgError unless every retreating edge is a back edge.

    Retreating edges are found with one iterative depth-first walk (an edge
    into a block still on the DFS stack); the graph is reducible exactly
    when each such edge targets a dominator of its source.
    """
    if not cfg.blocks:
        return
    if doms is None:
        doms = dominator_sets(cfg)

    WHITE, GRAY, BLACK = 0, 1, 2
    color = [WHITE] * len(cfg.blocks)
    stack: list[tuple[int, int]] = [(0, 0)]  # (block, next successor slot)
    color[0] = GRAY
    while stack:
        bid, slot = stack[-1]
        succs = cfg.blocks[bid].succs
        if slot == len(succs):
            color[bid] = BLACK
            stack.pop()
            continue
        stack[-1] = (bid, slot + 1)
        t = succs[slot]
        if color[t] == WHITE:
            color[t] = GRAY
            stack.append((t, 0))
        elif color[t] == GRAY and t not in doms[bid]:
            raise IrreducibleCfgError(bid, t)


def is_reducible(cfg: Cfg) -> bool:
    try:
        check_reducible(cfg)
    except IrreducibleCfgError:
        return False
    return True


# ---------------------------------------------------------------------------
# Liveness
# ---------------------------------------------------------------------------


def _instr_uses(instr: Instruction) -> set[Register]:
    uses = {r for _, r in instr.general_srcs()}
    if instr.guard is not None:
        uses.add(instr.guard[0])
        if instr.dest is not None:
            uses.add(instr.dest)  # a skipped write keeps the old value alive
    return uses


def _instr_kills(instr: Instruction) -> set[Register]:
    if instr.dest is not None and instr.guard is None:
        return {instr.dest}
    return set()


@dataclass
class Liveness:
    live_in: list[set[Register]]
    live_out: list[set[Register]]
    instr_live_out: dict[int, set[Register]]


def compute_liveness(cfg: Cfg) -> Liveness:
    """Backward liveness over general and predicate registers."""
    nb = len(cfg.blocks)
    use = [set() for _ in range(nb)]
    defs = [set() for _ in range(nb)]
    for b in cfg.blocks:
        seen_defs: set[Register] = set()
        for instr in cfg.instructions(b.id):
            use[b.id] |= _instr_uses(instr) - seen_defs
            kills = _instr_kills(instr)
            seen_defs |= kills
            defs[b.id] |= kills

    live_in = [set() for _ in range(nb)]
    live_out = [set() for _ in range(nb)]
    work = list(range(nb))
    while work:
        bid = work.pop()
        b = cfg.blocks[bid]
        out: set[Register] = set()
        for s in b.succs:
            out |= live_in[s]
        new_in = use[bid] | (out - defs[bid])
        live_out[bid] = out
        if new_in != live_in[bid]:
            live_in[bid] = new_in
            for p in b.preds:
                if p not in work:
                    work.append(p)

    instr_live_out: dict[int, set[Register]] = {}
    for b in cfg.blocks:
        live = set(live_out[b.id])
        for i in reversed(b.instruction_range()):
            instr = cfg.program.instructions[i]
            instr_live_out[i] = set(live)
            live = (live - _instr_kills(instr)) | _instr_uses(instr)
    return Liveness(live_in, live_out, instr_live_out)


def mark_dead_bits(program: Program, cfg: Cfg, liveness: Liveness | None = None) -> None:
    """Fill each instruction's dead_srcs with stale source positions.

    A source register is dead after the instruction when the instruction
    overwrites it or when it is not live-out; its cached copy can then be
    dropped instead of written back. Unreachable instructions get an empty
    (fully conservative) set.
    """
    if liveness is None:
        liveness = compute_liveness(cfg)
    for instr in program.instructions:
        instr.dead_srcs = frozenset()
    for i, bid in cfg.block_of.items():
        instr = program.instructions[i]
        live_out = liveness.instr_live_out[i]
        dead = frozenset(
            pos
            for pos, r in instr.general_srcs()
            if r == instr.dest or r not in live_out
        )
        instr.dead_srcs = dead


# ---------------------------------------------------------------------------
# Reaching definitions and live ranges
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LiveRange:
    """A def-use web of one general register.

    sites lists the instruction indices where the range is defined or used;
    has_entry_def marks ranges that can still carry the register's value
    from kernel entry.
    """

    id: int
    reg: Register
    sites: tuple[int, ...]
    def_sites: frozenset[int]
    has_entry_def: bool


@dataclass
class LiveRangeInfo:
    ranges: list[LiveRange]
    def_range: dict[int, int]  # instruction index -> range id
    use_range: dict[tuple[int, int], int]  # (instruction, src position) -> id
    reach_in_ranges: list[dict[Register, frozenset[int]]]  # per block
    reach_out_ranges: list[dict[Register, frozenset[int]]]

    def range_of_site(self, instr_index: int, reg: Register) -> int | None:
        rid = self.def_range.get(instr_index)
        if rid is not None and self.ranges[rid].reg == reg:
            return rid
        for (i, _pos), rid in self.use_range.items():
            if i == instr_index and self.ranges[rid].reg == reg:
                return rid
        return None


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        root = x
        while self.parent.setdefault(root, root) != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def compute_live_ranges(program: Program, cfg: Cfg) -> LiveRangeInfo:
    """Group definitions and uses into webs via reaching definitions.

    Every register mentioned anywhere starts with a virtual entry-value
    definition, so a use with no preceding write still lands in a range.
    Definitions that meet at a block entry are merged into one range even
    when the register is dead there: the renumber pass must give both
    writers the same storage or a join point would see two names.
    """
    nb = len(cfg.blocks)
    mentioned: set[Register] = set()
    for instr in program.instructions:
        mentioned.update(instr.general_registers())

    uf = _UnionFind()
    empty: dict[Register, frozenset[int]] = {r: frozenset() for r in mentioned}
    reach_in: list[dict[Register, frozenset[int]]] = [dict(empty) for _ in range(nb)]
    reach_out: list[dict[Register, frozenset[int]]] = [dict(empty) for _ in range(nb)]
    if nb:
        reach_in[0] = {r: frozenset({ENTRY_SITE}) for r in mentioned}

    def transfer(bid: int) -> dict[Register, frozenset[int]]:
        cur = dict(reach_in[bid])
        for i in cfg.blocks[bid].instruction_range():
            instr = program.instructions[i]
            for r in instr.general_defs():
                if instr.guard is None:
                    cur[r] = frozenset({i})
                else:
                    cur[r] = cur[r] | {i}
        return cur

    entry_seed = {r: frozenset({ENTRY_SITE}) for r in mentioned}
    work = list(range(nb))
    while work:
        bid = work.pop(0)
        # The entry keeps its virtual definitions even when it is also a
        # loop target with real predecessors.
        merged = dict(entry_seed) if bid == 0 else dict(empty)
        for p in cfg.blocks[bid].preds:
            for r, sites in reach_out[p].items():
                merged[r] = merged[r] | sites
        reach_in[bid] = merged
        out = transfer(bid)
        if out != reach_out[bid]:
            reach_out[bid] = out
            for s in cfg.blocks[bid].succs:
                if s not in work:
                    work.append(s)

    # Union pass: merge every multi-def meet, then attach uses to the defs
    # that reach them.
    use_defs: list[tuple[tuple[int, int], Register, tuple]] = []
    for b in cfg.blocks:
        for r, sites in reach_in[b.id].items():
            sl = sorted(sites)
            for s in sl[1:]:
                uf.union((r, sl[0]), (r, s))
        cur = {r: set(sites) for r, sites in reach_in[b.id].items()}
        for i in b.instruction_range():
            instr = program.instructions[i]
            for pos, r in instr.general_srcs():
                defs = sorted(cur[r])
                assert defs, f"use of {r} at {i} with no reaching definition"
                for s in defs[1:]:
                    uf.union((r, defs[0]), (r, s))
                use_defs.append(((i, pos), r, (r, defs[0])))
            for r in instr.general_defs():
                if instr.guard is None:
                    cur[r] = {i}
                else:
                    cur[r].add(i)

    # Collect webs.
    groups: dict[tuple, dict] = {}
    for b in cfg.blocks:
        for i in b.instruction_range():
            instr = program.instructions[i]
            for r in instr.general_defs():
                rep = uf.find((r, i))
                g = groups.setdefault(
                    rep, {"reg": r, "sites": set(), "defs": set(), "entry": False}
                )
                g["sites"].add(i)
                g["defs"].add(i)
    for (i_pos, r, key) in use_defs:
        rep = uf.find(key)
        g = groups.setdefault(
            rep, {"reg": r, "sites": set(), "defs": set(), "entry": False}
        )
        g["sites"].add(i_pos[0])
    for r in mentioned:
        key = (r, ENTRY_SITE)
        if key in uf.parent:
            rep = uf.find(key)
            if rep in groups:
                groups[rep]["entry"] = True

    def group_key(kv):
        g = kv[1]
        first_def = ENTRY_SITE if g["entry"] else min(g["defs"], default=len(program.instructions))
        return (min(g["sites"]), g["reg"].index, first_def)

    ordered = sorted(groups.items(), key=group_key)
    ranges: list[LiveRange] = []
    rep_to_id: dict[tuple, int] = {}
    for rid, (rep, g) in enumerate(ordered):
        rep_to_id[rep] = rid
        ranges.append(
            LiveRange(
                id=rid,
                reg=g["reg"],
                sites=tuple(sorted(g["sites"])),
                def_sites=frozenset(g["defs"]),
                has_entry_def=g["entry"],
            )
        )

    def_range = {}
    for b in cfg.blocks:
        for i in b.instruction_range():
            instr = program.instructions[i]
            for r in instr.general_defs():
                def_range[i] = rep_to_id[uf.find((r, i))]
    use_range = {i_pos: rep_to_id[uf.find(key)] for (i_pos, _r, key) in use_defs}

    def to_ranges(table: dict[Register, frozenset[int]]) -> dict[Register, frozenset[int]]:
        out: dict[Register, frozenset[int]] = {}
        for r, sites in table.items():
            ids = set()
            for s in sites:
                rep = uf.find((r, s))
                if rep in rep_to_id:
                    ids.add(rep_to_id[rep])
            out[r] = frozenset(ids)
        return out

    return LiveRangeInfo(
        ranges=ranges,
        def_range=def_range,
        use_range=use_range,
        reach_in_ranges=[to_ranges(t) for t in reach_in],
        reach_out_ranges=[to_ranges(t) for t in reach_out],
    )
