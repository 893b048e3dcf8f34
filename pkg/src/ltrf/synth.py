"""Seeded generators of small structured kernels.

random_source builds terminating, reducible programs out of straight-line
runs, forward if/if-else regions, and counted loops; it is the fuzz corpus
for the compiler passes. make_register_bound_program builds one specific
stress kernel whose operands pile onto two main-file banks, which is what
separates the designs in the latency sweep.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .ir import Program, parse_program
from .rfsim import TraceKnobs

_PRED_NAMES = ("pa", "pb", "pc", "pd", "pe", "pf", "pg", "ph")
_CMPS = ("eq", "ne", "lt", "le", "gt", "ge")
_CALL_TARGETS = ("helper0", "helper1", "helper2")


@dataclass
class SynthKnobs:
    max_depth: int = 3
    max_items: int = 5
    reg_pool: int = 8
    max_trips: int = 4
    branch_budget: int = 10
    mem_ops: bool = True
    calls: bool = True


class _Gen:
    def __init__(self, rng: random.Random, knobs: SynthKnobs):
        self.rng = rng
        self.knobs = knobs
        self.lines: list[str] = []
        self.defined: list[int] = []
        self.n_labels = 0
        self.branches_left = knobs.branch_budget

    def label(self) -> str:
        self.n_labels += 1
        return f"L{self.n_labels}"

    def emit(self, text: str):
        self.lines.append(f"    {text};")

    def define(self, reg: int):
        if reg not in self.defined:
            self.defined.append(reg)

    def pick_src(self) -> int:
        return self.rng.choice(self.defined)

    def pick_dest(self, protected: frozenset[int]) -> int | None:
        free = [r for r in range(self.knobs.reg_pool) if r not in protected]
        return self.rng.choice(free) if free else None

    def pred(self) -> str:
        return self.rng.choice(_PRED_NAMES)

    def cmp(self) -> str:
        return self.rng.choice(_CMPS)

    # -- items --------------------------------------------------------------

    def straight(self, protected: frozenset[int]):
        for _ in range(self.rng.randint(1, 3)):
            d = self.pick_dest(protected)
            if d is None:
                return
            if self.rng.random() < 0.4:
                self.emit(f"mov.u32 R{d}, {self.rng.randrange(0, 64)}")
            else:
                a, b = self.pick_src(), self.pick_src()
                self.emit(f"add.u32 R{d}, R{a}, R{b}")
            self.define(d)

    def memory(self, protected: frozenset[int]):
        addr = self.rng.randrange(0, 64) * 4
        if self.rng.random() < 0.5:
            d = self.pick_dest(protected)
            if d is None:
                return
            self.emit(f"ld.local.u32 R{d}, [{addr}]")
            self.define(d)
        else:
            self.emit(f"st.local.u32 [{addr}], R{self.pick_src()}")

    def if_region(self, depth: int, protected: frozenset[int], with_else: bool):
        need = 2 if with_else else 1
        if self.branches_left < need:
            return self.straight(protected)
        self.branches_left -= need
        p = self.pred()
        self.emit(f"set.{self.cmp()}.u32.u32 {p}, R{self.pick_src()}, R{self.pick_src()}")
        if with_else:
            l_else, l_end = self.label(), self.label()
            self.emit(f"@!{p} bra {l_else}")
            self.body(depth, protected)
            self.emit(f"bra {l_end}")
            self.lines.append(f"{l_else}:")
            self.body(depth, protected)
            self.lines.append(f"{l_end}:")
        else:
            l_skip = self.label()
            self.emit(f"@!{p} bra {l_skip}")
            self.body(depth, protected)
            self.lines.append(f"{l_skip}:")

    def loop(self, depth: int, protected: frozenset[int]):
        counter = self.pick_dest(protected)
        if counter is None or self.branches_left < 1:
            return self.straight(protected)
        self.branches_left -= 1
        trips = self.rng.randint(1, self.knobs.max_trips)
        head = self.label()
        self.emit(f"mov.u32 R{counter}, 0")
        self.define(counter)
        self.lines.append(f"{head}:")
        # the counter must survive the body, or the loop may never end
        self.body(depth, protected | {counter})
        self.emit(f"add.u32 R{counter}, R{counter}, 1")
        p = self.pred()
        self.emit(f"set.lt.u32.u32 {p}, R{counter}, {trips}")
        self.emit(f"@{p} bra {head}")

    def body(self, depth: int, protected: frozenset[int]):
        for _ in range(self.rng.randint(1, self.knobs.max_items)):
            roll = self.rng.random()
            if depth <= 0 or roll < 0.45:
                if self.knobs.mem_ops and self.rng.random() < 0.25:
                    self.memory(protected)
                elif self.knobs.calls and self.rng.random() < 0.08:
                    self.emit(f"call {self.rng.choice(_CALL_TARGETS)}")
                else:
                    self.straight(protected)
            elif roll < 0.60:
                self.if_region(depth - 1, protected, with_else=False)
            elif roll < 0.70:
                self.if_region(depth - 1, protected, with_else=True)
            else:
                self.loop(depth - 1, protected)


def random_source(seed: int, knobs: SynthKnobs | None = None) -> str:
    """A terminating, reducible kernel; the same seed gives the same text."""
    knobs = knobs or SynthKnobs()
    rng = random.Random(f"synth:{seed}")
    g = _Gen(rng, knobs)
    for r in range(min(2, knobs.reg_pool)):
        g.emit(f"mov.u32 R{r}, {rng.randrange(0, 16)}")
        g.define(r)
    g.body(knobs.max_depth, frozenset())
    g.emit("exit")
    return "\n".join(g.lines) + "\n"


def random_program(seed: int, knobs: SynthKnobs | None = None) -> Program:
    return parse_program(random_source(seed, knobs))


# ---------------------------------------------------------------------------
# The bank-pressure benchmark
# ---------------------------------------------------------------------------

# Eight registers that a 16-bank modulo map folds onto just two banks.
REGISTER_BOUND_REGS = (0, 16, 32, 48, 1, 17, 33, 49)


@dataclass(frozen=True)
class Benchmark:
    source: str
    knobs: TraceKnobs
    n_warps: int


def make_register_bound_program(iterations: int = 200, n_warps: int = 8) -> Benchmark:
    """A long arithmetic loop with no memory traffic whose whole register
    set lives on two main-file banks.

    A flat banked file serializes on those banks, so its throughput drops
    as soon as bank latency grows. A prefetching design pays one interval
    fetch per warp and then runs from the cache, so the same latency growth
    is amortized away. The walk knobs make the trace deterministic: the
    loop branch is always taken until the trip cap forces the exit.
    """
    regs = REGISTER_BOUND_REGS
    lines = [f"    mov.u32 R{r}, {i + 1};" for i, r in enumerate(regs)]
    lines.append("    mov.u32 R2, 0;")
    lines.append("LH:")
    # Each register is written exactly once per iteration.  A second write
    # in the body would split its lifetime into two renamed names and the
    # loop would need more cache lines than the architectural set suggests.
    for i in range(len(regs)):
        d = regs[i]
        a = regs[(i + 1) % len(regs)]
        b = regs[(i + 3) % len(regs)]
        lines.append(f"    add.u32 R{d}, R{a}, R{b};")
    lines.append("    add.u32 R2, R2, 1;")
    lines.append(f"    set.lt.u32.u32 pa, R2, {iterations};")
    lines.append("@pa bra LH;")
    lines.append("    exit;")
    knobs = TraceKnobs(
        branch_taken_prob=1.0,
        max_loop_trips=iterations,
        load_stall_prob=0.0,
        store_stall_prob=0.0,
        max_steps=max(100_000, iterations * 40),
    )
    return Benchmark(source="\n".join(lines) + "\n", knobs=knobs, n_warps=n_warps)
