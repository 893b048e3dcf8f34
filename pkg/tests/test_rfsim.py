"""Simulator tests.

Every frozen number in here was computed by hand from the latency rules:
a fetch of k registers costs ceil(base * mult * (1 + conflicts)) for the
most loaded bank, plus ceil(k / crossbar) to move them, plus the fixed
table-update cost; conflicts count the extra rounds of the most loaded
main bank. The scheduler timelines were traced cycle by cycle in the
test comments.
"""

from fractions import Fraction

import pytest

from ltrf.intervals import build_intervals
from ltrf.ir import LD_LOCAL, LtrfError, ParseError, parse_program
from ltrf.renumber import apply_renumbering, renumber_program
from ltrf.rfsim import (
    SWEEP_MULTIPLIERS,
    AllocationUnit,
    ExecEvent,
    IntervalEnterEvent,
    LongLatencyEvent,
    NonTerminatingPath,
    RegisterFileConfig,
    SimResult,
    SimulationDeadlock,
    TraceKnobs,
    format_traces,
    generate_traces,
    max_tolerable_latency,
    parse_traces,
    prefetch_latency,
    run_sweep,
    simulate,
    wcb_storage_bits,
    writeback_latency,
)

def bits(regs):
    v = 0
    for r in regs:
        v |= 1 << r
    return v


LTRF = RegisterFileConfig(design="LTRF")
PLUS = RegisterFileConfig(design="LTRF_PLUS")
BL = RegisterFileConfig(design="BL")
RFC = RegisterFileConfig(design="RFC")


# ---------------------------------------------------------------------------
# Latency arithmetic
# ---------------------------------------------------------------------------


def test_prefetch_latency_pinned_examples():
    # distinct banks: ceil(1*1*1) + ceil(4/4) + 1 = 3
    assert prefetch_latency(LTRF, {0, 1, 4, 5}) == 3
    # 0 and 16 share bank 0, 1 and 17 share bank 1: one extra round
    # ceil(1*1*2) + ceil(4/4) + 1 = 4
    assert prefetch_latency(LTRF, {0, 1, 16, 17}) == 4


def test_empty_transfers():
    assert prefetch_latency(LTRF, set()) == LTRF.wcb_access_cycles
    assert writeback_latency(LTRF, set()) == 0


def test_fractional_multiplier_rounds_up():
    cfg = RegisterFileConfig(design="LTRF", bank_latency_multiplier=Fraction(5, 4))
    # ceil(1 * 5/4) + ceil(1/4) + 1 = 2 + 1 + 1
    assert prefetch_latency(cfg, {0}) == 4
    floaty = RegisterFileConfig(design="LTRF", bank_latency_multiplier=1.25)
    assert floaty.bank_latency_multiplier == Fraction(5, 4)


def test_crossbar_defaults():
    assert RegisterFileConfig(design="BL").crossbar_width == 16
    assert RegisterFileConfig(design="LTRF").crossbar_width == 4
    narrow = RegisterFileConfig(design="LTRF", crossbar_regs_per_cycle=2)
    # five distinct banks: 1 + ceil(5/2) + 1
    assert prefetch_latency(narrow, {0, 1, 2, 3, 4}) == 5


def test_wcb_storage_bits():
    # 64 contexts * (256 * (4+1) bank pointers + 3 row bits + 2*256 vectors)
    assert wcb_storage_bits(RegisterFileConfig(design="LTRF")) == 114880
    small = RegisterFileConfig(
        design="LTRF", cache_banks=4, active_warps=8, total_warps=16
    )
    # 16 * (256 * 3 + 3 + 512) = 16 * 1283
    assert wcb_storage_bits(small) == 20528


def test_allocation_unit_conservation():
    aau = AllocationUnit(3, "test")
    assert [aau.allocate() for _ in range(3)] == [0, 1, 2]
    with pytest.raises(AssertionError):
        aau.allocate()
    aau.release(1)
    assert aau.free == 1
    assert aau.allocate() == 1
    aau.release(0)
    with pytest.raises(AssertionError):
        aau.release(0)


# ---------------------------------------------------------------------------
# Trace format
# ---------------------------------------------------------------------------


def test_trace_round_trip():
    traces = {
        0: [
            IntervalEnterEvent(interval=0, vector=bits({0, 16}), live=bits({0})),
            ExecEvent(pc=3, reads=(0, 16), writes=(1,), dead=2),
            LongLatencyEvent(latency_class=1),
        ],
        5: [ExecEvent(pc=9, reads=(), writes=(), dead=0)],
    }
    text = format_traces(traces)
    assert parse_traces(text) == traces


def test_trace_comments_and_blanks():
    text = "# a comment\n\nW2 E 7 R:1,2 W: D:1\n"
    traces = parse_traces(text)
    assert traces == {2: [ExecEvent(pc=7, reads=(1, 2), writes=(), dead=1)]}
    assert traces[2][0].dead_reads() == (1,)


@pytest.mark.parametrize(
    "line",
    [
        "E 4 R: W: D:0",  # no warp prefix
        "W0 X 4",  # unknown tag
        "W0 E 4 R:999 W: D:0",  # register out of range
        "W0 I 0 V:zz L:00",  # bad hex
        "W0 M",  # missing class
    ],
)
def test_trace_parse_errors(line):
    with pytest.raises(ParseError):
        parse_traces(line + "\n")


# ---------------------------------------------------------------------------
# Hand-traced scheduler scenarios
# ---------------------------------------------------------------------------


def _two_warp_traces(other_writes: bool):
    """Warp 0 prefetches {0,16,32,48} (all on main bank 0: 6-cycle fetch)
    then runs one instruction; warp 1 prefetches {2} (3 cycles) then runs
    four instructions that either only read or also write its one cached
    register (cache bank 0, which warp 0's fill is holding)."""
    if other_writes:
        ev = ExecEvent(pc=1, reads=(), writes=(2,), dead=0)
    else:
        ev = ExecEvent(pc=1, reads=(2,), writes=(), dead=0)
    return {
        0: [
            IntervalEnterEvent(interval=0, vector=bits({0, 16, 32, 48}), live=0),
            ExecEvent(pc=0, reads=(0,), writes=(16,), dead=0),
        ],
        1: [IntervalEnterEvent(interval=1, vector=bits({2}), live=0)] + [ev] * 4,
    }


def test_issue_overlaps_a_prefetch():
    # t0 both transitions start; warp 1 is ready at t3 and its reads do not
    # touch a bank being filled, so it issues at 3, 4, 5; at t6 warp 0's
    # fetch is done and round-robin lets it go first (6), warp 1's last
    # instruction lands at t7 and completes at 8.
    res = simulate(_two_warp_traces(other_writes=False), LTRF)
    assert res.instructions == 5
    assert res.cycles == 8
    assert res.prefetch_count == 2
    assert res.fetched_registers == 5
    assert res.demand_main_rf_in_interval == 0
    assert res.cache_accesses == 6 and res.cache_hits == 6


def test_fill_holds_the_write_port():
    # same shape, but warp 1 writes its cached register: that cache bank's
    # write port belongs to warp 0's fill until t6, so warp 1 cannot issue
    # anything before it; warp 0 issues at 6, warp 1 at 7, 8, 9, 10.
    res = simulate(_two_warp_traces(other_writes=True), LTRF)
    assert res.instructions == 5
    assert res.cycles == 11


def _stall_trace():
    return {
        0: [
            IntervalEnterEvent(interval=0, vector=bits({0, 1}), live=bits({0})),
            ExecEvent(pc=0, reads=(0,), writes=(1,), dead=1),
            LongLatencyEvent(latency_class=0),
            ExecEvent(pc=1, reads=(1,), writes=(), dead=0),
        ]
    }


def test_deactivation_and_reactivation():
    # enter (3 cycles), issue at t3, deactivate at t4 (writeback 3, wake at
    # 404), refetch 404..407, final issue at 407 completes at 408
    ltrf = simulate(_stall_trace(), LTRF)
    plus = simulate(_stall_trace(), PLUS)
    for res in (ltrf, plus):
        assert res.instructions == 2
        assert res.cycles == 408
        assert res.activations == 2
        assert res.deactivations == 1
        assert res.demand_main_rf_in_interval == 0
    # the plain design moves both registers out and back; the liveness-
    # filtered one skips the dead value both ways
    assert ltrf.fetched_registers == 4
    assert ltrf.written_back_registers == 2
    assert plus.fetched_registers == 2
    assert plus.written_back_registers == 1


def _boundary_trace():
    return {
        0: [
            IntervalEnterEvent(interval=0, vector=bits({0, 1}), live=bits({0, 1})),
            ExecEvent(pc=0, reads=(0, 1), writes=(), dead=0),
            IntervalEnterEvent(interval=1, vector=bits({1, 2}), live=bits({1, 2})),
            ExecEvent(pc=1, reads=(1, 2), writes=(), dead=0),
        ]
    }


def test_boundary_moves_only_the_difference():
    # second entry: {0} leaves (3-cycle writeback), {2} arrives (3-cycle
    # fetch), {1} stays put; issues at t3 and t10, so 11 cycles
    res = simulate(_boundary_trace(), LTRF)
    assert res.instructions == 2
    assert res.cycles == 11
    assert res.fetched_registers == 3
    assert res.written_back_registers == 1
    assert res.prefetch_latency_histogram == {3: 2}
    assert res.conflict_histogram == {0: 2}


def test_flat_design_ignores_interval_events():
    # both boundary events are free for BL; reads of banks 0,1 then 1,2:
    # the second instruction's bank-1 access queues behind the first's
    res = simulate(_boundary_trace(), BL)
    assert res.instructions == 2
    assert res.cycles == 4
    assert res.main_rf_accesses == 4
    assert res.cache_accesses == 0
    assert res.prefetch_count == 0


def test_bank_queue_serializes_one_warp():
    # R0, R16, R32 all live on main bank 0: three serial accesses per
    # instruction, so instruction 1 spans 0..3 (done at 4), instruction 2
    # spans 4..7 (done at 8)
    trace = {
        0: [
            ExecEvent(pc=0, reads=(0, 16), writes=(32,), dead=0),
            ExecEvent(pc=1, reads=(0, 16), writes=(32,), dead=0),
        ]
    }
    res = simulate(trace, BL)
    assert res.cycles == 8
    assert res.main_rf_accesses == 6
    slow = simulate(trace, RegisterFileConfig(design="BL", bank_latency_multiplier=2))
    assert slow.cycles == 14


def test_bank_queue_serializes_across_warps():
    trace = {
        0: [ExecEvent(pc=0, reads=(0,), writes=(), dead=0)],
        1: [ExecEvent(pc=0, reads=(0,), writes=(), dead=0)],
    }
    res = simulate(trace, BL)
    # single issue at t0 and t1; the second access queues behind the first
    assert res.cycles == 3
    assert res.main_rf_accesses == 2


def test_rfc_cache_behavior():
    # registers 5, 37, 69, 101, 133 all map to set 5 of the 32-set cache;
    # reads miss and fetch, writes allocate without fetching, the fifth
    # distinct register evicts dirty register 5 through the bank without
    # stalling the warp
    trace = {
        0: [
            ExecEvent(pc=0, reads=(5,)),
            ExecEvent(pc=1, reads=(5,)),
            ExecEvent(pc=2, writes=(5,)),
            ExecEvent(pc=3, writes=(37,)),
            ExecEvent(pc=4, reads=(69,)),
            ExecEvent(pc=5, reads=(101,)),
            ExecEvent(pc=6, reads=(133,)),
        ]
    }
    res = simulate(trace, RFC)
    assert res.instructions == 7
    assert res.cache_accesses == 7
    assert res.cache_hits == 2
    assert res.cache_hit_rate == Fraction(2, 7)
    assert res.main_rf_accesses == 5
    assert res.written_back_registers == 1
    assert res.cycles == 11


def test_working_set_wider_than_cache_rejected():
    trace = {0: [IntervalEnterEvent(interval=0, vector=bits(range(5)), live=0)]}
    cfg = RegisterFileConfig(design="LTRF", cache_banks=4)
    with pytest.raises(LtrfError):
        simulate(trace, cfg)


def test_cycle_budget_guards_against_runaway():
    cfg = RegisterFileConfig(design="LTRF", max_cycles=50)
    with pytest.raises(SimulationDeadlock):
        simulate(_stall_trace(), cfg)


def test_max_tolerable_latency_picks_largest_survivor():
    def fake(cycles):
        return SimResult(design="LTRF", instructions=100, cycles=cycles)

    sweep = [
        (Fraction(1), fake(100)),
        (Fraction(5, 4), fake(103)),
        (Fraction(3, 2), fake(150)),
        (Fraction(8, 5), fake(104)),
    ]
    assert max_tolerable_latency(sweep) == Fraction(8, 5)


# ---------------------------------------------------------------------------
# Trace generation
# ---------------------------------------------------------------------------


@pytest.fixture
def compare_icfg(array_compare):
    return build_intervals(array_compare, max_regs=16)


def test_walks_are_deterministic(compare_icfg):
    a = generate_traces(compare_icfg, 4, seed=7)
    b = generate_traces(compare_icfg, 4, seed=7)
    assert a == b
    assert sorted(a) == [0, 1, 2, 3]


def test_walk_structure(compare_icfg):
    traces = generate_traces(compare_icfg, 2, seed=1)
    program = compare_icfg.program
    for events in traces.values():
        assert events[0].kind == "interval_enter"
        # the whole kernel collapses to one interval at a 16-register
        # budget, so no further boundary events appear
        assert sum(e.kind == "interval_enter" for e in events) == 1
        for i, ev in enumerate(events):
            if ev.kind != "exec":
                continue
            if program.instructions[ev.pc].opcode == LD_LOCAL:
                assert events[i + 1].kind == "long_latency"


def test_walk_emits_dead_bits(compare_icfg):
    traces = generate_traces(compare_icfg, 1, seed=3)
    # the equality test reads both loaded words for the last time
    ev = next(e for e in traces[0] if e.kind == "exec" and e.pc == 6)
    assert ev.reads == (4, 5)
    assert ev.dead == 0b11


def test_walk_rejects_endless_loop():
    icfg = build_intervals(parse_program("L: bra L;"), max_regs=16)
    with pytest.raises(NonTerminatingPath):
        generate_traces(icfg, 1, seed=0)


def test_renumbered_walk_is_paired(array_compare):
    before = build_intervals(array_compare, max_regs=16)
    after = apply_renumbering(renumber_program(array_compare, max_regs=16))
    ta = generate_traces(before, 3, seed=11)
    tb = generate_traces(after, 3, seed=11)
    for w in ta:
        assert [e.kind for e in ta[w]] == [e.kind for e in tb[w]]
        assert [e.pc for e in ta[w] if e.kind == "exec"] == [
            e.pc for e in tb[w] if e.kind == "exec"
        ]


# ---------------------------------------------------------------------------
# End to end on the walk-through kernel
# ---------------------------------------------------------------------------


def test_ltrf_runs_entirely_from_cache(compare_icfg):
    traces = generate_traces(compare_icfg, 8, seed=1)
    res = simulate(traces, LTRF)
    assert res.instructions == sum(
        e.kind == "exec" for evs in traces.values() for e in evs
    )
    assert res.demand_main_rf_in_interval == 0
    assert res.cache_hit_rate == 1
    # every stall deactivates once and reactivates once per warp
    assert res.activations == res.deactivations + 8


def test_liveness_filter_never_moves_more(compare_icfg):
    traces = generate_traces(compare_icfg, 8, seed=2)
    ltrf = simulate(traces, LTRF)
    plus = simulate(traces, PLUS)
    assert plus.instructions == ltrf.instructions
    assert plus.fetched_registers <= ltrf.fetched_registers
    assert plus.written_back_registers <= ltrf.written_back_registers


def test_sweep_shapes(compare_icfg):
    traces = generate_traces(compare_icfg, 4, seed=5)
    sweep = run_sweep(traces, LTRF)
    assert [m for m, _ in sweep] == list(SWEEP_MULTIPLIERS)
    assert len({r.instructions for _, r in sweep}) == 1
    best = max_tolerable_latency(sweep)
    assert best in SWEEP_MULTIPLIERS
