"""Trace-driven timing model of a streaming multiprocessor register file.

Five designs share one scheduler:

* BL: a flat banked main register file; every operand pays a bank access.
* RFC: BL plus a small LRU register cache in front of the banks.
* LTRF: a two-level file. The main file may be slow (bank_latency_multiplier)
  because a software prefetch at each register-interval boundary moves the
  interval's working set into a small per-warp cache, and execution then
  only touches the cache.
* LTRF_PLUS: LTRF with liveness filtering; dead values are neither fetched
  nor written back.
* LTRF_CONF: LTRF_PLUS run over a bank-conflict-aware renumbered kernel.
  The simulator treats it as LTRF_PLUS; the difference is in the trace.

The model is deliberately small: one instruction issues per cycle, interval
transitions of different warps proceed in parallel with issue, and the
clock jumps over quiet stretches so long memory stalls cost nothing to
simulate. All latency arithmetic is exact (fractions and ceilings), so
results are bit-stable across platforms.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import ClassVar

from .cfg import mark_dead_bits
from .intervals import IntervalCfg, prefetch_markers
from .ir import (
    BRA,
    EXIT,
    LD_LOCAL,
    REG_COUNT,
    ST_LOCAL,
    LtrfError,
    ParseError,
    Program,
)
from .renumber import BankLayout, count_bank_conflicts

DESIGNS = ("BL", "RFC", "LTRF", "LTRF_PLUS", "LTRF_CONF")
LTRF_FAMILY = ("LTRF", "LTRF_PLUS", "LTRF_CONF")

# Latency multipliers used by the slow-main-register-file sweep.
SWEEP_MULTIPLIERS = (
    Fraction(1),
    Fraction(5, 4),
    Fraction(3, 2),
    Fraction(8, 5),
    Fraction(14, 5),
    Fraction(53, 10),
    Fraction(63, 10),
)


class SimulationDeadlock(LtrfError):
    """No runnable warp and no pending event, but work remains."""


class NonTerminatingPath(LtrfError):
    """The trace generator's random walk exceeded its loop/step budget."""


# ---------------------------------------------------------------------------
# Trace events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExecEvent:
    kind: ClassVar[str] = "exec"
    pc: int
    reads: tuple[int, ...] = ()
    writes: tuple[int, ...] = ()
    dead: int = 0  # bitmask over positions of `reads`

    def dead_reads(self) -> tuple[int, ...]:
        return tuple(r for i, r in enumerate(self.reads) if self.dead >> i & 1)


@dataclass(frozen=True)
class IntervalEnterEvent:
    kind: ClassVar[str] = "interval_enter"
    interval: int
    vector: int  # 256-bit working-set vector
    live: int  # 256-bit live-on-entry vector


@dataclass(frozen=True)
class LongLatencyEvent:
    kind: ClassVar[str] = "long_latency"
    latency_class: int = 0


TraceEvent = ExecEvent | IntervalEnterEvent | LongLatencyEvent
Traces = dict[int, list]


def _regs_to_text(regs) -> str:
    return ",".join(str(r) for r in regs)


def format_traces(traces: Traces) -> str:
    lines = []
    for warp in sorted(traces):
        for ev in traces[warp]:
            if ev.kind == "exec":
                lines.append(
                    f"W{warp} E {ev.pc} R:{_regs_to_text(ev.reads)} "
                    f"W:{_regs_to_text(ev.writes)} D:{ev.dead}"
                )
            elif ev.kind == "interval_enter":
                lines.append(
                    f"W{warp} I {ev.interval} V:{ev.vector:064x} L:{ev.live:064x}"
                )
            else:
                lines.append(f"W{warp} M {ev.latency_class}")
    return "\n".join(lines) + "\n"


def _parse_reg_list(text: str, line_no: int) -> tuple[int, ...]:
    if not text:
        return ()
    out = []
    for part in text.split(","):
        if not part.isdigit() or int(part) >= REG_COUNT:
            raise ParseError(line_no, f"bad register {part!r} in trace")
        out.append(int(part))
    return tuple(out)


def parse_traces(text: str) -> Traces:
    """Parse the line-per-event trace format back into per-warp lists."""
    traces: Traces = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2 or not parts[0].startswith("W") or not parts[0][1:].isdigit():
            raise ParseError(line_no, f"bad trace line {raw!r}")
        warp = int(parts[0][1:])
        tag = parts[1]
        try:
            if tag == "E":
                fields = {p.split(":", 1)[0]: p.split(":", 1)[1] for p in parts[3:]}
                ev: TraceEvent = ExecEvent(
                    pc=int(parts[2]),
                    reads=_parse_reg_list(fields.get("R", ""), line_no),
                    writes=_parse_reg_list(fields.get("W", ""), line_no),
                    dead=int(fields.get("D", "0")),
                )
            elif tag == "I":
                fields = {p.split(":", 1)[0]: p.split(":", 1)[1] for p in parts[3:]}
                ev = IntervalEnterEvent(
                    interval=int(parts[2]),
                    vector=int(fields.get("V", "0"), 16),
                    live=int(fields.get("L", "0"), 16),
                )
            elif tag == "M":
                ev = LongLatencyEvent(latency_class=int(parts[2]))
            else:
                raise ParseError(line_no, f"unknown trace event {tag!r}")
        except (ValueError, IndexError):
            raise ParseError(line_no, f"malformed trace line {raw!r}") from None
        traces.setdefault(warp, []).append(ev)
    return traces


def vector_regs(vector: int) -> tuple[int, ...]:
    return tuple(i for i in range(REG_COUNT) if vector >> i & 1)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RegisterFileConfig:
    design: str = "LTRF"
    main_banks: int = 16
    base_bank_latency: int = 1
    bank_latency_multiplier: Fraction = Fraction(1)
    bank_map: str = "mod"
    cache_banks: int = 16  # also the per-warp register budget
    active_warps: int = 8
    total_warps: int = 64
    crossbar_regs_per_cycle: int | None = None
    wcb_access_cycles: int = 1
    memory_stall_cycles: int = 400
    rfc_ways: int = 4
    max_cycles: int = 200_000_000

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"design must be one of {DESIGNS}")
        m = self.bank_latency_multiplier
        if isinstance(m, float):
            m = Fraction(str(m))
        self.bank_latency_multiplier = Fraction(m)

    @property
    def is_two_level(self) -> bool:
        return self.design in LTRF_FAMILY

    @property
    def filters_dead_values(self) -> bool:
        return self.design in ("LTRF_PLUS", "LTRF_CONF")

    @property
    def crossbar_width(self) -> int:
        if self.crossbar_regs_per_cycle is not None:
            return self.crossbar_regs_per_cycle
        # the two-level designs share a narrower cache-fill crossbar
        return max(1, self.main_banks // 4) if self.is_two_level else self.main_banks

    def main_layout(self) -> BankLayout:
        return BankLayout(n_banks=self.main_banks, mapping=self.bank_map)

    def bank_service_cycles(self) -> int:
        return math.ceil(self.base_bank_latency * self.bank_latency_multiplier)


def prefetch_latency(config: RegisterFileConfig, fetched) -> int:
    """Cycles to move a register set from the main file into the cache.

    An empty fetch still touches the per-warp table. Otherwise the most
    loaded main bank sets the read time, the crossbar moves crossbar_width
    registers per cycle, and the table update adds its fixed cost.
    """
    fetched = set(fetched)
    if not fetched:
        return config.wcb_access_cycles
    conflicts = count_bank_conflicts(fetched, config.main_layout())
    bank = math.ceil(
        config.base_bank_latency * config.bank_latency_multiplier * (1 + conflicts)
    )
    xbar = math.ceil(Fraction(len(fetched), config.crossbar_width))
    return bank + xbar + config.wcb_access_cycles


def writeback_latency(config: RegisterFileConfig, regs) -> int:
    """Mirror of prefetch_latency for traffic back to the main file;
    writing nothing back is free."""
    regs = set(regs)
    if not regs:
        return 0
    conflicts = count_bank_conflicts(regs, config.main_layout())
    bank = math.ceil(
        config.base_bank_latency * config.bank_latency_multiplier * (1 + conflicts)
    )
    xbar = math.ceil(Fraction(len(regs), config.crossbar_width))
    return bank + xbar + config.wcb_access_cycles


def wcb_storage_bits(config: RegisterFileConfig) -> int:
    """Bits of bookkeeping state for every hardware warp context: a cache
    bank pointer (plus valid bit) per architectural register, the warp's
    cache row, and the working-set and liveness vectors."""
    bank_ptr = (config.cache_banks - 1).bit_length() + 1
    row_ptr = (config.active_warps - 1).bit_length()
    per_warp = REG_COUNT * bank_ptr + row_ptr + 2 * REG_COUNT
    return config.total_warps * per_warp


# ---------------------------------------------------------------------------
# Allocation bookkeeping
# ---------------------------------------------------------------------------


class AllocationUnit:
    """Free-list allocator whose conservation invariant is checked on every
    operation: ids are never lost and never duplicated."""

    def __init__(self, capacity: int, name: str):
        self.capacity = capacity
        self.name = name
        self.unused: deque[int] = deque(range(capacity))
        self.occupied: set[int] = set()

    def _check(self):
        assert len(self.unused) + len(self.occupied) == self.capacity, (
            f"{self.name}: allocation leak"
        )
        assert self.occupied.isdisjoint(self.unused), f"{self.name}: double booking"

    def allocate(self) -> int:
        assert self.unused, f"{self.name}: allocating from an empty pool"
        slot = self.unused.popleft()
        self.occupied.add(slot)
        self._check()
        return slot

    def release(self, slot: int):
        assert slot in self.occupied, f"{self.name}: releasing a free slot"
        self.occupied.remove(slot)
        self.unused.append(slot)
        self._check()

    @property
    def free(self) -> int:
        return len(self.unused)


class _RfCache:
    """Set-associative LRU cache of warp-registers for the RFC design."""

    def __init__(self, n_lines: int, ways: int):
        assert n_lines % ways == 0, "cache lines must fill whole sets"
        self.n_sets = n_lines // ways
        self.ways = ways
        self.sets: list[dict[tuple[int, int], list]] = [
            {} for _ in range(self.n_sets)
        ]
        self._stamp = 0

    def _tick(self) -> int:
        self._stamp += 1
        return self._stamp

    def lookup(self, warp: int, reg: int) -> bool:
        s = self.sets[reg % self.n_sets]
        line = s.get((warp, reg))
        if line is None:
            return False
        line[1] = self._tick()
        return True

    def mark_dirty(self, warp: int, reg: int):
        self.sets[reg % self.n_sets][(warp, reg)][0] = True

    def insert(self, warp: int, reg: int, dirty: bool):
        """Returns the evicted (warp, reg) when a dirty line is displaced."""
        s = self.sets[reg % self.n_sets]
        victim = None
        if len(s) >= self.ways:
            key = min(s, key=lambda k: s[k][1])
            if s[key][0]:
                victim = key
            del s[key]
        s[(warp, reg)] = [dirty, self._tick()]
        return victim


# ---------------------------------------------------------------------------
# Result counters
# ---------------------------------------------------------------------------


@dataclass
class SimResult:
    design: str
    instructions: int = 0
    cycles: int = 0
    main_rf_accesses: int = 0
    cache_accesses: int = 0
    cache_hits: int = 0
    prefetch_count: int = 0
    fetched_registers: int = 0
    written_back_registers: int = 0
    demand_main_rf_in_interval: int = 0
    activations: int = 0
    deactivations: int = 0
    prefetch_latency_histogram: dict[int, int] = field(default_factory=dict)
    conflict_histogram: dict[int, int] = field(default_factory=dict)

    @property
    def ipc(self) -> Fraction:
        return Fraction(self.instructions, self.cycles) if self.cycles else Fraction(0)

    @property
    def cache_hit_rate(self) -> Fraction | None:
        if not self.cache_accesses:
            return None
        return Fraction(self.cache_hits, self.cache_accesses)

    def to_dict(self) -> dict:
        hit = self.cache_hit_rate
        return {
            "design": self.design,
            "instructions": self.instructions,
            "cycles": self.cycles,
            "ipc": float(self.ipc),
            "ipc_exact": str(self.ipc),
            "main_rf_accesses": self.main_rf_accesses,
            "cache_accesses": self.cache_accesses,
            "cache_hits": self.cache_hits,
            "cache_hit_rate": None if hit is None else float(hit),
            "prefetch_count": self.prefetch_count,
            "fetched_registers": self.fetched_registers,
            "written_back_registers": self.written_back_registers,
            "demand_main_rf_in_interval": self.demand_main_rf_in_interval,
            "activations": self.activations,
            "deactivations": self.deactivations,
            "prefetch_latency_histogram": {
                str(k): v for k, v in sorted(self.prefetch_latency_histogram.items())
            },
            "conflict_histogram": {
                str(k): v for k, v in sorted(self.conflict_histogram.items())
            },
        }


# ---------------------------------------------------------------------------
# Per-warp simulation state
# ---------------------------------------------------------------------------

_INACTIVE = "inactive"
_ACTIVE = "active"
_SLEEPING = "sleeping"
_DONE = "done"


class _Warp:
    def __init__(self, wid: int, events: list, cache_banks: int):
        self.id = wid
        self.events = events
        self.pos = 0
        self.state = _INACTIVE
        self.busy_until = 0
        self.transition_until = 0
        self.wake_at = 0
        self.row: int | None = None
        self.bank_aau = AllocationUnit(cache_banks, f"warp {wid} cache banks")
        self.addr_table: dict[int, int] = {}  # cached reg -> cache bank
        self.ws_vector = 0
        self.live_vector = 0
        self.filling_banks: set[int] = set()
        self.ever_active = False

    def next_event(self):
        return self.events[self.pos] if self.pos < len(self.events) else None

    @property
    def cached(self):
        return self.addr_table.keys()

    def live_regs(self, regs) -> set[int]:
        return {r for r in regs if self.live_vector >> r & 1}


# ---------------------------------------------------------------------------
# The simulator
# ---------------------------------------------------------------------------


class _Simulator:
    def __init__(self, traces: Traces, config: RegisterFileConfig):
        if len(traces) > config.total_warps:
            raise ValueError(
                f"trace has {len(traces)} warps, hardware context limit is "
                f"{config.total_warps}"
            )
        self.config = config
        self.result = SimResult(design=config.design)
        self.warps = [
            _Warp(wid, traces[wid], config.cache_banks) for wid in sorted(traces)
        ]
        self.rows = AllocationUnit(config.active_warps, "warp rows")
        self.pending: list[_Warp] = [w for w in self.warps if w.events]
        for w in self.warps:
            if not w.events:
                w.state = _DONE
        self.row_releases: list[tuple[int, int]] = []  # (due cycle, row)
        self.rfc = (
            _RfCache(config.cache_banks * config.active_warps, config.rfc_ways)
            if config.design == "RFC"
            else None
        )
        self.bank_free = [0] * config.main_banks
        self.now = 0
        self.horizon = 0
        self.last_issued = -1

    # -- helpers ----------------------------------------------------------

    def _stretch(self, t: int):
        if t > self.horizon:
            self.horizon = t

    def _count_prefetch(self, fetched: set[int], latency: int):
        r = self.result
        r.prefetch_count += 1
        r.fetched_registers += len(fetched)
        r.main_rf_accesses += len(fetched)
        r.prefetch_latency_histogram[latency] = (
            r.prefetch_latency_histogram.get(latency, 0) + 1
        )
        conflicts = count_bank_conflicts(fetched, self.config.main_layout())
        r.conflict_histogram[conflicts] = r.conflict_histogram.get(conflicts, 0) + 1

    def _count_writeback(self, regs: set[int]):
        self.result.written_back_registers += len(regs)
        self.result.main_rf_accesses += len(regs)

    def _bank_access(self, reg: int, earliest: int) -> int:
        """FCFS access to a main-file bank; returns the completion cycle."""
        bank = self.config.main_layout().bank_of(reg)
        start = max(earliest, self.bank_free[bank])
        done = start + self.config.bank_service_cycles()
        self.bank_free[bank] = done
        self.result.main_rf_accesses += 1
        return done

    # -- LTRF-family state transitions -------------------------------------

    def _cache_fill(self, warp: _Warp, regs: set[int], *, fetch: set[int], live: set[int]):
        """Allocate cache banks for regs; fetch is the subset actually read
        from the main file, live the subset whose values are valid."""
        for r in sorted(regs):
            bank = warp.bank_aau.allocate()
            warp.addr_table[r] = bank
        warp.filling_banks = {warp.addr_table[r] for r in fetch}
        for r in regs:
            if r in live:
                warp.live_vector |= 1 << r
            else:
                warp.live_vector &= ~(1 << r)

    def _cache_drop(self, warp: _Warp, regs: set[int]):
        # liveness bits survive a drop on purpose: a deactivated warp's
        # vector is what decides which values a later refetch can skip
        for r in sorted(regs):
            warp.bank_aau.release(warp.addr_table.pop(r))

    def _interval_enter(self, warp: _Warp, ev: IntervalEnterEvent):
        cfg = self.config
        new_ws = set(vector_regs(ev.vector))
        if len(new_ws) > cfg.cache_banks:
            raise LtrfError(
                f"interval {ev.interval} holds {len(new_ws)} registers but the "
                f"cache has {cfg.cache_banks} banks per warp"
            )
        marker_live = set(vector_regs(ev.live))
        cached = set(warp.cached)
        leaving = cached - new_ws
        entering = new_ws - cached

        wb = warp.live_regs(leaving) if cfg.filters_dead_values else set(leaving)
        fetch = entering & marker_live if cfg.filters_dead_values else set(entering)

        self._cache_drop(warp, leaving)
        self._cache_fill(warp, entering, fetch=fetch, live=entering & marker_live)
        warp.ws_vector = ev.vector

        wb_lat = writeback_latency(cfg, wb)
        f_lat = prefetch_latency(cfg, fetch)
        self._count_writeback(wb)
        self._count_prefetch(fetch, f_lat)
        warp.transition_until = self.now + wb_lat + f_lat
        self._stretch(warp.transition_until)

    def _deactivate(self, warp: _Warp, ev: LongLatencyEvent):
        cfg = self.config
        r = self.result
        r.deactivations += 1
        cached = set(warp.cached)
        if cfg.is_two_level:
            wb = warp.live_regs(cached) if cfg.filters_dead_values else cached
            self._count_writeback(wb)
            wb_lat = writeback_latency(cfg, wb)
            self._cache_drop(warp, cached)
        else:
            wb_lat = 0
        stall = cfg.memory_stall_cycles * (ev.latency_class + 1)
        self.row_releases.append((self.now + wb_lat, warp.row))
        warp.row = None
        self._stretch(self.now + wb_lat)
        if warp.next_event() is None:
            warp.state = _DONE
        else:
            warp.state = _SLEEPING
            warp.wake_at = self.now + max(stall, wb_lat)
            self._stretch(warp.wake_at)

    def _activate(self, warp: _Warp):
        cfg = self.config
        warp.row = self.rows.allocate()
        warp.state = _ACTIVE
        warp.busy_until = self.now
        warp.transition_until = self.now
        self.result.activations += 1

        if not cfg.is_two_level:
            return
        nxt = warp.next_event()
        if nxt is not None and nxt.kind == "interval_enter":
            return  # the entry event pays for its own fetch
        if not warp.ever_active and warp.ws_vector == 0:
            return  # nothing saved yet, nothing to restore
        ws = set(vector_regs(warp.ws_vector))
        fetch = warp.live_regs(ws) if cfg.filters_dead_values else set(ws)
        live = warp.live_regs(ws)
        self._cache_fill(warp, ws, fetch=fetch, live=live)
        lat = prefetch_latency(cfg, fetch)
        self._count_prefetch(fetch, lat)
        warp.transition_until = self.now + lat
        self._stretch(warp.transition_until)

    # -- instruction issue --------------------------------------------------

    def _blocked_by_fill(self, warp: _Warp, ev: ExecEvent) -> bool:
        """A prefetch in flight holds the write port of every bank it fills,
        so an instruction writing one of those banks must wait; the lower
        warp id wins the port. Reads use a separate port and never wait."""
        if not self.config.is_two_level:
            return False
        banks = {warp.addr_table[r] for r in ev.writes if r in warp.addr_table}
        if not banks:
            return False
        for other in self.warps:
            if (
                other.id < warp.id
                and other.state == _ACTIVE
                and other.transition_until > self.now
                and banks & other.filling_banks
            ):
                return True
        return False

    def _issue(self, warp: _Warp, ev: ExecEvent):
        cfg = self.config
        r = self.result
        regs = (*ev.reads, *ev.writes)
        if cfg.is_two_level:
            r.cache_accesses += len(regs)
            for reg in regs:
                if reg in warp.addr_table:
                    r.cache_hits += 1
                else:
                    r.demand_main_rf_in_interval += 1
                    r.main_rf_accesses += 1
            for reg in ev.dead_reads():
                warp.live_vector &= ~(1 << reg)
            for reg in ev.writes:
                if reg in warp.addr_table:
                    warp.live_vector |= 1 << reg
            warp.busy_until = self.now + 1
        elif cfg.design == "RFC":
            done = self.now
            for i, reg in enumerate(regs):
                is_write = i >= len(ev.reads)
                r.cache_accesses += 1
                if self.rfc.lookup(warp.id, reg):
                    r.cache_hits += 1
                    if is_write:
                        self.rfc.mark_dirty(warp.id, reg)
                    continue
                if is_write:
                    victim = self.rfc.insert(warp.id, reg, dirty=True)
                else:
                    done = max(done, self._bank_access(reg, self.now))
                    victim = self.rfc.insert(warp.id, reg, dirty=False)
                if victim is not None:
                    # dirty eviction drains through the bank without
                    # stalling the issuing warp
                    self._bank_access(victim[1], self.now)
                    r.written_back_registers += 1
            warp.busy_until = done + 1
        else:  # BL
            done = self.now
            for reg in regs:
                done = max(done, self._bank_access(reg, self.now))
            warp.busy_until = done + 1

        r.instructions += 1
        self._stretch(warp.busy_until)

    # -- main loop -----------------------------------------------------------

    def run(self) -> SimResult:
        cfg = self.config
        while True:
            if all(w.state == _DONE for w in self.warps):
                break
            if self.now > cfg.max_cycles:
                raise SimulationDeadlock(
                    f"no convergence within {cfg.max_cycles} cycles"
                )
            progressed = False

            # release rows whose writeback has drained
            due = [x for x in self.row_releases if x[0] <= self.now]
            if due:
                self.row_releases = [x for x in self.row_releases if x[0] > self.now]
                for _t, row in due:
                    self.rows.release(row)

            # wake sleepers
            for w in self.warps:
                if w.state == _SLEEPING and w.wake_at <= self.now:
                    w.state = _INACTIVE
                    if w not in self.pending:
                        self.pending.append(w)

            # activate lowest-id pending warps while rows are free
            self.pending.sort(key=lambda w: w.id)
            while self.pending and self.rows.free:
                w = self.pending[0]
                if w.state != _INACTIVE:
                    self.pending.pop(0)
                    continue
                self.pending.pop(0)
                self._activate(w)
                w.ever_active = True
                progressed = True

            # phase A: interval transitions and deactivations, all warps
            for w in self.warps:
                if w.state != _ACTIVE or w.transition_until > self.now:
                    continue
                if w.busy_until > self.now:
                    continue
                while True:
                    ev = w.next_event()
                    if ev is None:
                        self.rows.release(w.row)
                        w.row = None
                        w.state = _DONE
                        progressed = True
                        break
                    if ev.kind == "interval_enter":
                        w.pos += 1
                        if cfg.is_two_level:
                            self._interval_enter(w, ev)
                            progressed = True
                            break
                        progressed = True
                        continue  # free for one-level designs
                    if ev.kind == "long_latency":
                        w.pos += 1
                        self._deactivate(w, ev)
                        progressed = True
                        break
                    break  # exec events wait for phase B

            # phase B: single issue, round robin from after the last issuer
            order = sorted(self.warps, key=lambda w: (w.id <= self.last_issued, w.id))
            for w in order:
                if w.state != _ACTIVE:
                    continue
                if w.busy_until > self.now or w.transition_until > self.now:
                    continue
                ev = w.next_event()
                if ev is None or ev.kind != "exec":
                    continue
                if self._blocked_by_fill(w, ev):
                    continue
                w.pos += 1
                self._issue(w, ev)
                self.last_issued = w.id
                progressed = True
                break

            if progressed:
                self.now += 1
                continue

            # quiet cycle: jump to the next time anything can happen
            candidates = [t for t, _ in self.row_releases if t > self.now]
            for w in self.warps:
                if w.state == _SLEEPING:
                    candidates.append(w.wake_at)
                elif w.state == _ACTIVE:
                    if w.transition_until > self.now:
                        candidates.append(w.transition_until)
                    if w.busy_until > self.now:
                        candidates.append(w.busy_until)
            future = [t for t in candidates if t > self.now]
            if not future:
                stuck = [w.id for w in self.warps if w.state != _DONE]
                raise SimulationDeadlock(
                    f"warps {stuck} can never make progress"
                )
            self.now = min(future)

        for _t, row in self.row_releases:
            self.rows.release(row)
        assert not self.rows.occupied, "warp rows leaked by the scheduler"
        self.result.cycles = max(self.horizon, 0)
        return self.result


def simulate(traces: Traces, config: RegisterFileConfig) -> SimResult:
    """Run one design over a set of warp traces and return its counters."""
    return _Simulator(traces, config).run()


def run_sweep(
    traces: Traces,
    config: RegisterFileConfig,
    multipliers=SWEEP_MULTIPLIERS,
) -> list[tuple[Fraction, SimResult]]:
    """Simulate the same traces across main-file latency multipliers."""
    out = []
    for m in multipliers:
        out.append((Fraction(m), simulate(traces, replace(config, bank_latency_multiplier=Fraction(m)))))
    return out


def max_tolerable_latency(sweep: list[tuple[Fraction, SimResult]]) -> Fraction:
    """Largest multiplier whose IPC stays within 5% of the unit-latency IPC."""
    by_mult = dict(sweep)
    base = by_mult[Fraction(1)].ipc
    floor = Fraction(19, 20) * base
    tolerable = Fraction(1)
    for m, res in sweep:
        if res.ipc >= floor and m > tolerable:
            tolerable = m
    return tolerable


# ---------------------------------------------------------------------------
# Trace generation
# ---------------------------------------------------------------------------


@dataclass
class TraceKnobs:
    branch_taken_prob: float = 0.5
    max_loop_trips: int = 4
    load_stall_prob: float = 1.0
    store_stall_prob: float = 0.0
    max_steps: int = 100_000


def _exec_event(program: Program, idx: int) -> ExecEvent:
    instr = program.instructions[idx]
    reads = tuple(r.index for r in instr.general_reads())
    writes = tuple(r.index for r in instr.general_defs())
    dead = 0
    if instr.dead_srcs:
        dead_regs = {
            r.index
            for pos, r in instr.general_srcs()
            if pos in instr.dead_srcs
        }
        for i, r in enumerate(reads):
            if r in dead_regs:
                dead |= 1 << i
    return ExecEvent(pc=idx, reads=reads, writes=writes, dead=dead)


def generate_traces(
    icfg: IntervalCfg,
    n_warps: int,
    knobs: TraceKnobs | None = None,
    seed: int = 0,
) -> Traces:
    """Seeded random control-flow walks over an interval-annotated kernel.

    Every instruction on the walk becomes an exec event (predication is a
    fetch-level detail the timing model ignores); entering a block of a
    different interval emits an interval_enter first, and memory operations
    are followed by a long_latency stall according to the knobs. Backward
    branches are capped at max_loop_trips consecutive trips so every walk
    terminates, and the same seed yields the same walk for structurally
    identical kernels, which keeps design comparisons paired.
    """
    knobs = knobs or TraceKnobs()
    program = icfg.program
    cfg = icfg.cfg
    if any(i.dead_srcs is None for i in program.instructions):
        mark_dead_bits(program, cfg)
    markers = {m.interval_id: m for m in prefetch_markers(icfg)}
    start_to_block = {cfg.blocks[b].start: b for b in range(len(cfg.blocks))}

    traces: Traces = {}
    for warp in range(n_warps):
        rng = random.Random(f"{seed}:{warp}")
        events: list[TraceEvent] = []
        block = 0 if cfg.blocks else None
        current_interval = None
        trips: dict[int, int] = {}
        steps = 0
        while block is not None:
            iid = icfg.block_to_interval[block]
            if iid != current_interval:
                m = markers[iid]
                events.append(
                    IntervalEnterEvent(
                        interval=iid,
                        vector=m.working_set_vector,
                        live=m.live_in_vector,
                    )
                )
                current_interval = iid
            b = cfg.blocks[block]
            nxt = None
            for idx in b.instruction_range():
                steps += 1
                if steps > knobs.max_steps:
                    raise NonTerminatingPath(
                        f"warp {warp} walk exceeded {knobs.max_steps} steps"
                    )
                instr = program.instructions[idx]
                events.append(_exec_event(program, idx))
                if instr.opcode == LD_LOCAL:
                    if rng.random() < knobs.load_stall_prob:
                        events.append(LongLatencyEvent(0))
                elif instr.opcode == ST_LOCAL:
                    if rng.random() < knobs.store_stall_prob:
                        events.append(LongLatencyEvent(0))
                elif instr.opcode == EXIT and instr.guard is None:
                    nxt = None
                    break
                if instr.opcode == BRA:
                    target = program.labels[instr.target]
                    backward = target <= idx
                    take = True
                    if instr.guard is not None:
                        take = rng.random() < knobs.branch_taken_prob
                    if backward:
                        if trips.get(idx, 0) >= knobs.max_loop_trips:
                            if instr.guard is None:
                                raise NonTerminatingPath(
                                    f"unconditional backward branch at {idx} "
                                    f"exceeded {knobs.max_loop_trips} trips"
                                )
                            take = False
                        if take:
                            trips[idx] = trips.get(idx, 0) + 1
                        else:
                            trips[idx] = 0
                    if take:
                        nxt = start_to_block.get(target)
                        break
            else:
                # fell off the block (or a guard failed): continue with the
                # instructions right after it, or stop at the program end
                nxt = start_to_block.get(b.end)
            block = nxt
        traces[warp] = events
    return traces
